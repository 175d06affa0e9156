"""Independent reference computations shared by module tests and the acceptance suite.

None of these helpers call into the code under test to compute an expected
value; they only drive it and compare.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
from dataclasses import dataclass

from nada.core import Domain, parse_rid
from nada.crypto import Rng
from nada.errors import NadaError, PolicyDenied, StateMismatch
from nada.overlay import connect, get_ticket
from nada.policy import Request, Rule, pdp_evaluate
from nada.simnet.scenario import Runner, World, parse_config
from nada.trust_anchor import PCR_COUNT, TrustAnchor, TrustedDataStore, verify_log_chain

# ---------------------------------------------------------------------------
# measured boot and sealing
# ---------------------------------------------------------------------------

BASE_BOOT = ((0, b"firmware-v1"), (1, b"node-management-v1"), (2, b"slice-image-C1/A1"))


def oracle_pcrs(boot: tuple[tuple[int, bytes], ...]) -> tuple[bytes, ...]:
    pcrs = [bytes(32)] * PCR_COUNT
    for index, code in boot:
        pcrs[index] = hashlib.sha256(pcrs[index] + hashlib.sha256(code).digest()).digest()
    return tuple(pcrs)


def seal_perturbations() -> list[tuple[str, tuple[tuple[int, bytes], ...]]]:
    """Boot sequences that differ from BASE_BOOT in exactly one measurement-level way."""
    fw, nm, sl = BASE_BOOT
    cases = [(f"extra extend of pcr {i}", BASE_BOOT + ((i, b"extra"),)) for i in range(PCR_COUNT)]
    cases += [
        ("patched firmware", ((0, b"firmware-v2"), nm, sl)),
        ("patched node management", (fw, (1, b"node-management-v1-evil"), sl)),
        ("patched slice image", (fw, nm, (2, b"slice-image-C1/A1-evil"))),
        ("slice missing", (fw, nm)),
        ("firmware missing", (nm, sl)),
        ("node management missing", (fw, sl)),
        ("image measured into wrong pcr", (fw, nm, (3, sl[1]))),
        ("firmware measured twice", (fw, fw, nm, sl)),
        ("second slice installed", BASE_BOOT + ((2, b"slice-image-C2/A1"),)),
        ("nothing measured", ()),
        ("single bit flip in firmware", ((0, b"firmware-v0"), nm, sl)),
        ("empty firmware", ((0, b""), nm, sl)),
        # Same registers, different order across registers: state is unchanged.
        ("cross-register reorder", (nm, fw, sl)),
        ("identical reboot", BASE_BOOT),
        ("slice before base", (sl, fw, nm)),
    ]
    return cases


@dataclass
class SealCase:
    name: str
    expected: bool
    unsealed: bool
    storage_key: bool
    unexpected: str | None = None

    @property
    def ok(self) -> bool:
        return self.unexpected is None and self.expected == self.unsealed == self.storage_key


def seal_sweep(seed: int = 1) -> list[SealCase]:
    from nada.core import ResourceId

    rid = ResourceId.app_slice("C1", "A1")
    out = []
    for name, boot in seal_perturbations():
        anchor = TrustAnchor("n1", Rng(seed))
        tds = TrustedDataStore()
        for i, code in BASE_BOOT:
            anchor.extend(i, "c", code)
        blob = anchor.seal(b"payload")
        anchor.compute_storage_key(tds, rid)
        key = anchor.get_storage_key(tds, rid)
        anchor.reset()
        for i, code in boot:
            anchor.extend(i, "c", code)
        expected = oracle_pcrs(boot) == oracle_pcrs(BASE_BOOT)
        case = SealCase(name, expected, False, False)
        try:
            case.unsealed = anchor.unseal(blob) == b"payload"
        except StateMismatch:
            pass
        except Exception as err:  # anything else is a defect
            case.unexpected = f"unseal: {type(err).__name__}"
        try:
            case.storage_key = anchor.get_storage_key(tds, rid) == key
        except StateMismatch:
            pass
        except Exception as err:
            case.unexpected = f"get_storage_key: {type(err).__name__}"
        out.append(case)
    return out


# ---------------------------------------------------------------------------
# log chains
# ---------------------------------------------------------------------------


def make_chain(n: int = 10, seed: int = 3):
    anchor = TrustAnchor("n1", Rng(seed))
    anchor.synchronize_clock()
    for i in range(n):
        anchor.sign_log(f"user_request|{i}".encode(), 100 + i)
    return list(anchor.log), anchor.log_public


FIELD_MUTATIONS = {
    "timestamp": lambda e: dataclasses.replace(e, timestamp=e.timestamp + 1),
    "payload": lambda e: dataclasses.replace(e, payload=e.payload + b"!"),
    "signer": lambda e: dataclasses.replace(e, signer=e.signer + "x"),
    "prev_digest": lambda e: dataclasses.replace(e, prev_digest=bytes([e.prev_digest[0] ^ 1]) + e.prev_digest[1:]),
    "signature": lambda e: dataclasses.replace(e, signature=bytes([e.signature[0] ^ 1]) + e.signature[1:]),
}


def log_mutation_cases(n: int = 10):
    """(description, tampered chain, index the tampering first shows at)."""
    chain, _ = make_chain(n)
    cases = []
    for i in range(n):
        for fname, mutate in FIELD_MUTATIONS.items():
            c = list(chain)
            c[i] = mutate(c[i])
            cases.append((f"{fname}@{i}", c, i))
    for i, j in itertools.combinations(range(n), 2):
        c = list(chain)
        c[i], c[j] = c[j], c[i]
        cases.append((f"swap {i}<->{j}", c, i))
    for i in range(n - 1):
        c = chain[:i] + chain[i + 1:]
        cases.append((f"delete {i}", c, i))
    for i in range(1, n):
        c = chain[:i] + [chain[i - 1]] + chain[i:]
        cases.append((f"duplicate {i - 1} at {i}", c, i))
    return cases


def log_sweep(n: int = 10) -> list[tuple[str, bool]]:
    _, public = make_chain(n)
    out = []
    for name, chain, index in log_mutation_cases(n):
        v = verify_log_chain(chain, public)
        out.append((name, (not v.accepted) and v.index == index))
    return out


# ---------------------------------------------------------------------------
# overlay confinement
# ---------------------------------------------------------------------------

SLICES = ("C1/A1", "C2/A1", "C3/A1")


def matrix_config(bits: int):
    """``bits`` bit 3*i+j set  <=>  slice j's policy admits slice i on overlay j."""
    admit = [[bool(bits >> (3 * i + j) & 1) for j in range(3)] for i in range(3)]
    slices = [{"rid": SLICES[j], "nodes": ["n1", "n2"], "image_size": 64,
               "policy": {"overlay_peers": [SLICES[i] for i in range(3) if admit[i][j]]}} for j in range(3)]
    return admit, parse_config({"name": f"matrix-{bits}", "seed": 1, "nodes": ["n1", "n2"], "slices": slices,
                                "script": ["bringup", "install"]})


def _established(fn) -> bool | str:
    try:
        fn()
        return True
    except PolicyDenied:
        return False
    except NadaError as err:
        return type(err).__name__


def overlay_matrix(bits: int) -> list[tuple[int, int, bool, dict]]:
    """For each (requester i, overlay j): oracle verdict and what each enforcement route did."""
    admit, config = matrix_config(bits)
    world = World(config, config.seed)
    Runner(world).run()
    n1, n2 = world.nodes["n1"].agent, world.nodes["n2"].agent
    out = []
    for i, j in itertools.product(range(3), range(3)):
        req, ovl = parse_rid(SLICES[i]), parse_rid(SLICES[j])
        routes = {
            # full path: local check, ticket from management, ticketed handshake with n2
            "session": _established(lambda: connect(n1, "n2", ovl, Domain.NADA_NETWORK, req)),
            # management alone, skipping the requester's local check
            "ticket": _established(lambda: get_ticket(n1, req, "n2", ovl)),
            # target node's own policy check
            "target": _established(lambda: n2._check_policy(ovl, req)),
        }
        out.append((i, j, admit[i][j], routes))
    return out


def overlay_sweep(matrices=range(512)) -> list[tuple[int, int, int, bool, dict]]:
    rows = []
    for bits in matrices:
        for i, j, expected, routes in overlay_matrix(bits):
            rows.append((bits, i, j, expected, routes))
    return rows


def overlay_mismatches(rows) -> list:
    return [r for r in rows if any(v is not r[3] for v in r[4].values())]


# ---------------------------------------------------------------------------
# rule ordering
# ---------------------------------------------------------------------------

CUSTOMERS = ("C1", "C2")
EFFECTS = ("permit", "deny")


def two_cp_rules():
    """Every rule over a 2-customer universe: subject customer x resource customer x effect, wildcards included."""
    values = CUSTOMERS + ("*",)
    rules = []
    for s, r, e in itertools.product(values, values, EFFECTS):
        rules.append(Rule(f"{s}>{r}:{e}", (("customer", s),), (("customer", r),), effect=e))
    return rules


def oracle_decision(rules, subject_customer: str, resource_customer: str) -> tuple[str, str | None]:
    for rule in rules:
        s, r = dict(rule.subject)["customer"], dict(rule.resource)["customer"]
        if s in ("*", subject_customer) and r in ("*", resource_customer):
            return rule.effect, rule.rule_id
    return "deny", None


def pdp_ordering_mismatches() -> tuple[int, list]:
    """All ordered pairs of rules (and all singletons and the empty list) against every request."""
    rules = two_cp_rules()
    lists = [[]] + [[r] for r in rules] + [list(p) for p in itertools.permutations(rules, 2)]
    bad = []
    checked = 0
    for rl in lists:
        for sc, rc in itertools.product(CUSTOMERS, CUSTOMERS):
            d = pdp_evaluate(rl, Request({"customer": sc}, {"customer": rc}))
            checked += 1
            if (d.effect, d.rule_id) != oracle_decision(rl, sc, rc):
                bad.append(([r.rule_id for r in rl], sc, rc, d))
    return checked, bad


# ---------------------------------------------------------------------------
# acceptance bookkeeping (read by the terminal summary hook in conftest)
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def acceptance_line(number: int, title: str, ok: bool, detail: str) -> str:
    ACCEPTANCE_RESULTS[number] = (title, ok, detail)
    return f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
