"""Patient records: data model, line-delimited ingestion, splits, synthetic cohorts."""

from __future__ import annotations

import configparser
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ParseError, ValidationError


class CodeKind(str, enum.Enum):
    DIAGNOSIS = "dx"
    MEDICATION = "rx"


@dataclass(frozen=True)
class MedicalCode:
    kind: CodeKind
    raw: str
    index: int


class CodeVocabulary:
    """Raw code strings of one kind mapped to contiguous indices.

    Indices follow lexicographic order of the raw codes, so the mapping is
    reproducible from the set of codes alone.
    """

    def __init__(self, kind, raw_codes):
        self.kind = CodeKind(kind)
        codes = sorted(set(raw_codes))
        for c in codes:
            if not c:
                raise ValidationError(f"empty {self.kind.value} code")
        self.codes = tuple(codes)
        self._index = {c: i for i, c in enumerate(codes)}

    def __len__(self):
        return len(self.codes)

    def __contains__(self, raw):
        return raw in self._index

    def __iter__(self):
        return iter(self.codes)

    def __eq__(self, other):
        return isinstance(other, CodeVocabulary) and self.kind == other.kind and self.codes == other.codes

    def __repr__(self):
        return f"CodeVocabulary({self.kind.value}, n={len(self)})"

    def index(self, raw):
        return self._index[raw]

    def code(self, index):
        return MedicalCode(self.kind, self.codes[index], index)


@dataclass(frozen=True)
class Visit:
    diagnoses: tuple
    medications: tuple

    @property
    def is_target(self):
        """Visits without medications carry no label to predict."""
        return len(self.medications) > 0


@dataclass(frozen=True)
class PatientRecord:
    id: str
    visits: tuple

    def __len__(self):
        return len(self.visits)


@dataclass
class Cohort:
    patients: list
    diagnosis_vocab: CodeVocabulary
    medication_vocab: CodeVocabulary
    _by_id: dict = field(default=None, repr=False, compare=False)

    @property
    def single_visit(self):
        return [p for p in self.patients if len(p.visits) == 1]

    @property
    def multi_visit(self):
        return [p for p in self.patients if len(p.visits) > 1]

    @property
    def n_codes(self):
        return len(self.diagnosis_vocab) + len(self.medication_vocab)

    def patient(self, pid):
        if self._by_id is None:
            self._by_id = {p.id: p for p in self.patients}
        return self._by_id[pid]

    def vocab(self, kind):
        return self.diagnosis_vocab if CodeKind(kind) is CodeKind.DIAGNOSIS else self.medication_vocab

    def visit_codes(self, visit):
        """Raw diagnosis and medication codes of a visit."""
        return (
            [self.diagnosis_vocab.codes[i] for i in visit.diagnoses],
            [self.medication_vocab.codes[i] for i in visit.medications],
        )


def _parse_visit(obj, lineno, path):
    if not isinstance(obj, dict) or "dx" not in obj or "rx" not in obj:
        raise ParseError("visit must be an object with 'dx' and 'rx' lists", lineno, path)
    dx, rx = obj["dx"], obj["rx"]
    if not isinstance(dx, list) or not isinstance(rx, list):
        raise ParseError("'dx' and 'rx' must be lists", lineno, path)
    for c in dx + rx:
        if not isinstance(c, str) or not c:
            raise ParseError(f"code must be a nonempty string, got {c!r}", lineno, path)
    if not dx:
        raise ValidationError(f"{path}:{lineno}: visit with empty diagnosis set")
    return dx, rx


def parse_records(lines, path="<records>"):
    """Parse line-delimited patient records into a :class:`Cohort`."""
    raw = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid record: {exc.msg}", lineno, path) from None
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) or not isinstance(obj.get("visits"), list):
            raise ParseError("record needs a string 'id' and a 'visits' list", lineno, path)
        if not obj["visits"]:
            raise ValidationError(f"{path}:{lineno}: patient {obj['id']!r} has no visits")
        raw.append((obj["id"], [_parse_visit(v, lineno, path) for v in obj["visits"]], lineno))

    seen = set()
    for pid, _, lineno in raw:
        if pid in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate patient id {pid!r}")
        seen.add(pid)

    dx_vocab = CodeVocabulary(CodeKind.DIAGNOSIS, (c for _, vs, _ in raw for dx, _ in vs for c in dx))
    rx_vocab = CodeVocabulary(CodeKind.MEDICATION, (c for _, vs, _ in raw for _, rx in vs for c in rx))
    patients = []
    for pid, visits, _ in raw:
        patients.append(
            PatientRecord(
                pid,
                tuple(
                    Visit(
                        tuple(sorted({dx_vocab.index(c) for c in dx})),
                        tuple(sorted({rx_vocab.index(c) for c in rx})),
                    )
                    for dx, rx in visits
                ),
            )
        )
    return Cohort(patients, dx_vocab, rx_vocab)


def load_records(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_records(fh, str(path))


def format_records(cohort):
    lines = []
    for p in cohort.patients:
        visits = []
        for v in p.visits:
            dx, rx = cohort.visit_codes(v)
            visits.append({"dx": dx, "rx": rx})
        lines.append(json.dumps({"id": p.id, "visits": visits}))
    return "\n".join(lines) + "\n"


def write_records(cohort, path):
    Path(path).write_text(format_records(cohort), encoding="utf-8")


# -- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train: tuple
    validation: tuple
    test: tuple

    def to_json(self):
        return json.dumps({"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}, indent=1)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(tuple(obj["train"]), tuple(obj["validation"]), tuple(obj["test"]))


def split_sizes(n):
    n_train = (2 * n) // 3
    n_val = n // 6
    return n_train, n_val, n - n_train - n_val


def split_dataset(patients, seed):
    """Random 2/3 : 1/6 : 1/6 partition of patients (by id), deterministic in ``seed``."""
    ids = sorted(p.id if isinstance(p, PatientRecord) else p for p in patients)
    if len(ids) < 6:
        raise ConfigError(f"need at least 6 multi-visit patients to split, got {len(ids)}")
    n_train, n_val, _ = split_sizes(len(ids))
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return Split(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train : n_train + n_val]),
        tuple(shuffled[n_train + n_val :]),
    )


# -- synthetic cohorts -------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Knobs for :func:`generate_synthetic`.

    ``rules`` maps a diagnosis index to the medication indices it triggers;
    when empty, a table is drawn from the seed with ``rule_size`` medications
    per diagnosis. Diagnosis popularity follows a Zipf law with
    ``zipf_exponent`` (0 = uniform), giving a long tail of rare codes.

    Single-visit patients only feed the co-occurrence graph. With one
    diagnosis each (the default), their medications are exactly that
    diagnosis's rule set, so the graph carries the rule structure.
    """

    patients: int = 200
    single_visit_patients: int = 3000
    visits_min: int = 2
    visits_max: int = 4
    n_diagnoses: int = 60
    n_medications: int = 15
    dx_per_visit_min: int = 1
    dx_per_visit_max: int = 3
    single_dx_per_visit_min: int = 1
    single_dx_per_visit_max: int = 1
    rules: dict = field(default_factory=dict)
    rule_size_min: int = 1
    rule_size_max: int = 2
    noise: float = 0.0
    zipf_exponent: float = 0.0
    dx_group_size: int = 5
    rx_group_size: int = 4
    seed: int = 0

    def validate(self):
        if self.patients < 0 or self.single_visit_patients < 0:
            raise ConfigError("patient counts must be non-negative")
        if not 1 <= self.visits_min <= self.visits_max:
            raise ConfigError("need 1 <= visits_min <= visits_max")
        if self.n_diagnoses < 1 or self.n_medications < 1:
            raise ConfigError("vocabulary sizes must be positive")
        for lo, hi in ((self.dx_per_visit_min, self.dx_per_visit_max), (self.single_dx_per_visit_min, self.single_dx_per_visit_max)):
            if not 1 <= lo <= hi <= self.n_diagnoses:
                raise ConfigError("diagnoses per visit must satisfy 1 <= min <= max <= n_diagnoses")
        if not 1 <= self.rule_size_min <= self.rule_size_max <= self.n_medications:
            raise ConfigError("rule sizes must satisfy 1 <= min <= max <= n_medications")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError(f"noise rate must lie in [0, 1], got {self.noise}")
        for d, meds in self.rules.items():
            if not 0 <= d < self.n_diagnoses or any(not 0 <= m < self.n_medications for m in meds):
                raise ConfigError(f"rule {d} -> {sorted(meds)} references an index out of range")

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        if not parser.has_section("synthetic"):
            raise ConfigError(f"{path}: missing [synthetic] section")
        sec = parser["synthetic"]
        spec = cls()
        for key in sec:
            if key == "rules":
                spec.rules = parse_rule_table(sec[key])
            elif not hasattr(spec, key):
                raise ConfigError(f"{path}: unknown key {key!r} in [synthetic]")
            else:
                cur = getattr(spec, key)
                try:
                    setattr(spec, key, type(cur)(sec[key]))
                except ValueError:
                    raise ConfigError(f"{path}: bad value for {key!r}: {sec[key]!r}") from None
        spec.validate()
        return spec


def parse_rule_table(text):
    """Parse ``"0:0,1; 1:2"`` into ``{0: (0, 1), 1: (2,)}``."""
    rules = {}
    for chunk in text.replace("\n", ";").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            d, meds = chunk.split(":")
            rules[int(d)] = tuple(sorted({int(m) for m in meds.split(",") if m.strip()}))
        except ValueError:
            raise ConfigError(f"bad rule entry {chunk!r}; expected 'dx:rx,rx'") from None
    return rules


def diagnosis_code(i, n):
    return f"D{i:0{max(3, len(str(n - 1)))}d}"


def medication_code(i, n):
    return f"M{i:0{max(3, len(str(n - 1)))}d}"


def apply_rules(diagnoses, rules):
    """Union of the medications triggered by each diagnosis."""
    out = set()
    for d in diagnoses:
        out.update(rules.get(d, ()))
    return out


def _draw_rules(spec, rng):
    rules = {}
    for d in range(spec.n_diagnoses):
        k = int(rng.integers(spec.rule_size_min, spec.rule_size_max + 1))
        rules[d] = tuple(sorted(int(m) for m in rng.choice(spec.n_medications, size=k, replace=False)))
    return rules


def generate_synthetic(spec, seed=None):
    """Generate a synthetic cohort as ``(records_text, rules, hierarchies)``.

    Each visit samples a diagnosis set, emits the union of the rule
    medications and flips each medication's membership with probability
    ``spec.noise``. ``hierarchies`` maps ``"dx"``/``"rx"`` to hierarchy file
    text grouping consecutive codes under one category per group.
    """
    spec.validate()
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    rules = dict(spec.rules) if spec.rules else _draw_rules(spec, rng)
    if not any(rules.values()):
        raise ConfigError("empty rule table: no diagnosis triggers a medication")

    weights = 1.0 / np.arange(1, spec.n_diagnoses + 1) ** spec.zipf_exponent
    weights = weights / weights.sum()
    dx_order = rng.permutation(spec.n_diagnoses)
    probs = np.empty(spec.n_diagnoses)
    probs[dx_order] = weights

    def visit(lo, hi):
        k = int(rng.integers(lo, hi + 1))
        dx = sorted(int(d) for d in rng.choice(spec.n_diagnoses, size=k, replace=False, p=probs))
        meds = apply_rules(dx, rules)
        if spec.noise > 0:
            flips = rng.random(spec.n_medications) < spec.noise
            meds ^= {int(m) for m in np.flatnonzero(flips)}
        return {
            "dx": [diagnosis_code(d, spec.n_diagnoses) for d in dx],
            "rx": [medication_code(m, spec.n_medications) for m in sorted(meds)],
        }

    lines = []
    width = len(str(max(spec.patients, spec.single_visit_patients, 1)))
    for i in range(spec.patients):
        n_visits = int(rng.integers(spec.visits_min, spec.visits_max + 1))
        visits = [visit(spec.dx_per_visit_min, spec.dx_per_visit_max) for _ in range(n_visits)]
        lines.append(json.dumps({"id": f"P{i:0{width}d}", "visits": visits}))
    for i in range(spec.single_visit_patients):
        visits = [visit(spec.single_dx_per_visit_min, spec.single_dx_per_visit_max)]
        lines.append(json.dumps({"id": f"S{i:0{width}d}", "visits": visits}))
    records = "\n".join(lines) + "\n"

    hierarchies = {
        "dx": _group_hierarchy([diagnosis_code(i, spec.n_diagnoses) for i in range(spec.n_diagnoses)], spec.dx_group_size, "DG", "D_ROOT"),
        "rx": _group_hierarchy([medication_code(i, spec.n_medications) for i in range(spec.n_medications)], spec.rx_group_size, "MG", "M_ROOT"),
    }
    return records, rules, hierarchies


def _group_hierarchy(codes, group_size, prefix, root):
    group_size = max(1, group_size)
    n_groups = math.ceil(len(codes) / group_size)
    width = len(str(max(n_groups - 1, 1)))
    lines = [f"{root}\t{root}"]
    for g in range(n_groups):
        lines.append(f"{prefix}{g:0{width}d}\t{root}")
    for i, c in enumerate(codes):
        lines.append(f"{c}\t{prefix}{i // group_size:0{width}d}")
    return "\n".join(lines) + "\n"


def format_rules(rules, spec):
    return "".join(
        f"{diagnosis_code(d, spec.n_diagnoses)}\t{','.join(medication_code(m, spec.n_medications) for m in meds)}\n"
        for d, meds in sorted(rules.items())
    )
