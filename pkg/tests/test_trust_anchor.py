from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nada.core import ResourceId
from nada.crypto import Rng
from nada.errors import ClockUnsynchronized, DuplicateKey, IndexOutOfRange, IntegrityFailure, StateMismatch
from nada.trust_anchor import (
    PCR_COUNT,
    TrustAnchor,
    TrustedDataStore,
    measure_and_extend,
    PlatformState,
    replay_boot_log,
    verify_log_chain,
    verify_quote,
)

from .oracles import BASE_BOOT, log_sweep, make_chain, oracle_pcrs, seal_sweep

boots = st.lists(st.tuples(st.integers(0, PCR_COUNT - 1), st.binary(max_size=16)), max_size=6)


def booted(boot=BASE_BOOT, seed=1) -> TrustAnchor:
    a = TrustAnchor("n1", Rng(seed))
    for i, code in boot:
        a.extend(i, "c", code)
    return a


@given(boots)
def test_extend_matches_independent_hash_chain(boot):
    assert booted(tuple(boot)).platform.pcrs == oracle_pcrs(tuple(boot))


@given(boots)
def test_boot_log_replays_to_registers(boot):
    a = booted(tuple(boot))
    assert replay_boot_log(a.platform.boot_log) == a.platform.pcrs


def test_extend_rejects_bad_index():
    with pytest.raises(IndexOutOfRange):
        measure_and_extend(PlatformState(), PCR_COUNT, "x", b"")


def test_quote_verifies_against_expected_state_only():
    a = booted()
    q = a.quote(b"n" * 12)
    assert verify_quote(q, b"n" * 12, oracle_pcrs(BASE_BOOT), a.attestation_public)
    assert verify_quote(q, b"m" * 12, oracle_pcrs(BASE_BOOT), a.attestation_public).reason == "Freshness"
    assert verify_quote(q, b"n" * 12, oracle_pcrs(BASE_BOOT[:2]), a.attestation_public).reason == "StateMismatch"
    other = booted(seed=2)
    assert verify_quote(q, b"n" * 12, oracle_pcrs(BASE_BOOT), other.attestation_public).reason == "BadSignature"


def test_seal_sweep_unseals_iff_state_matches():
    cases = seal_sweep()
    assert len(cases) >= 20
    bad = [c for c in cases if not c.ok]
    assert not bad, bad
    # Both outcomes are exercised.
    assert any(c.expected for c in cases) and any(not c.expected for c in cases)


def test_tampered_sealed_blob_fails_integrity_in_matching_state():
    a = booted()
    blob = a.seal(b"payload")
    broken = type(blob)(blob.bound_pcrs, blob.nonce, bytes([blob.ciphertext[0] ^ 1]) + blob.ciphertext[1:],
                        blob.tag)
    with pytest.raises(IntegrityFailure):
        a.unseal(broken)


def test_reseal_moves_secrets_to_the_announced_state():
    a = booted()
    tds = TrustedDataStore()
    rid = ResourceId.app_slice("C1", "A1")
    a.compute_storage_key(tds, rid)
    key = a.get_storage_key(tds, rid)
    future = measure_and_extend(a.platform, 2, "slice", b"new")
    a.reseal(tds, future)
    with pytest.raises(StateMismatch):
        a.get_storage_key(tds, rid)
    a.extend(2, "slice", b"new")
    assert a.get_storage_key(tds, rid) == key


def test_storage_key_is_created_once():
    a = booted()
    tds = TrustedDataStore()
    rid = ResourceId.app_slice("C1", "A1")
    a.compute_storage_key(tds, rid)
    with pytest.raises(DuplicateKey):
        a.compute_storage_key(tds, rid)


def test_trusted_data_store_holds_sealed_blobs_only():
    with pytest.raises(TypeError):
        TrustedDataStore().put(ResourceId.management("NM"), "x", b"plaintext")


def test_log_signing_requires_clock():
    a = booted()
    with pytest.raises(ClockUnsynchronized):
        a.sign_log(b"x", 1)


def test_intact_chain_verifies():
    chain, public = make_chain()
    assert verify_log_chain(chain, public).accepted


def test_every_single_mutation_detected_at_its_index():
    results = log_sweep()
    assert len(results) > 100
    assert all(ok for _, ok in results), [n for n, ok in results if not ok]


@settings(max_examples=30)
@given(st.integers(0, 9), st.binary(min_size=1, max_size=8))
def test_random_payload_rewrite_detected(i, extra):
    import dataclasses

    chain, public = make_chain()
    chain[i] = dataclasses.replace(chain[i], payload=chain[i].payload + extra)
    v = verify_log_chain(chain, public)
    assert not v.accepted and v.index == i
