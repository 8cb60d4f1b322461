import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medaug.emr import (
    SyntheticSpec,
    apply_rules,
    generate_synthetic,
    parse_records,
    parse_rule_table,
    format_records,
    load_records,
    split_dataset,
    split_sizes,
    write_records,
)
from medaug.exceptions import ConfigError, ParseError, ValidationError


def _line(pid, *visits):
    return json.dumps({"id": pid, "visits": [{"dx": dx, "rx": rx} for dx, rx in visits]})


def test_vocabulary_counts():
    c = parse_records([_line("a", (["428.0"], ["N02B"])), _line("b", (["428.0"], ["N02B"]))])
    assert len(c.diagnosis_vocab) == 1
    assert len(c.medication_vocab) == 1


def test_three_visits_is_multi_visit():
    c = parse_records([_line("a", (["d"], ["m"]), (["d"], ["m"]), (["d"], ["m"])), _line("b", (["d"], ["m"]))])
    assert [p.id for p in c.multi_visit] == ["a"]
    assert [p.id for p in c.single_visit] == ["b"]


def test_duplicate_code_in_visit_deduplicates():
    c = parse_records([_line("a", (["d1", "d1", "d2"], ["m", "m"]))])
    assert c.patients[0].visits[0].diagnoses == (0, 1)
    assert c.patients[0].visits[0].medications == (0,)


def test_indices_follow_sorted_raw_codes():
    c = parse_records([_line("a", (["z", "b", "m"], ["x"]))])
    assert c.diagnosis_vocab.codes == ("b", "m", "z")
    assert c.diagnosis_vocab.index("z") == 2


def test_malformed_line_reports_line_number():
    with pytest.raises(ParseError) as exc:
        parse_records([_line("a", (["d"], ["m"])), "{not json"], path="r.jsonl")
    assert exc.value.line == 2
    assert "r.jsonl:2" in str(exc.value)


def test_empty_diagnosis_set_is_validation_error():
    with pytest.raises(ValidationError):
        parse_records([_line("a", ([], ["m"]))])


def test_empty_medication_set_is_kept_but_not_a_target():
    c = parse_records([_line("a", (["d"], [])), _line("b", (["d"], ["m"]))])
    v = c.patient("a").visits[0]
    assert v.medications == ()
    assert not v.is_target


def test_duplicate_patient_id_rejected():
    with pytest.raises(ValidationError):
        parse_records([_line("a", (["d"], ["m"])), _line("a", (["d"], ["m"]))])


def test_split_twelve():
    assert split_sizes(12) == (8, 2, 2)


def test_split_paper_cohort_size():
    assert split_sizes(6350) == (4233, 1058, 1059)


def test_split_same_seed_identical():
    ids = [f"p{i}" for i in range(30)]
    assert split_dataset(ids, 3) == split_dataset(ids, 3)
    assert split_dataset(ids, 3) != split_dataset(ids, 4)


def test_split_too_few_patients():
    with pytest.raises(ConfigError):
        split_dataset(["a", "b", "c", "d", "e"], 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(6, 300), st.integers(0, 2**32 - 1))
def test_split_is_disjoint_and_exhaustive(n, seed):
    ids = [f"p{i}" for i in range(n)]
    s = split_dataset(ids, seed)
    parts = [set(s.train), set(s.validation), set(s.test)]
    assert sum(map(len, parts)) == n
    assert set().union(*parts) == set(ids)
    assert (len(s.train), len(s.validation), len(s.test)) == split_sizes(n)


def test_rule_single_diagnosis():
    assert apply_rules([0], {0: (0, 1)}) == {0, 1}


def test_rule_union():
    assert apply_rules([0, 1], {0: (0,), 1: (1,)}) == {0, 1}


def test_parse_rule_table():
    assert parse_rule_table("0:0,1; 1:2") == {0: (0, 1), 1: (2,)}


def test_synthetic_noise_free_visits_follow_rules():
    spec = SyntheticSpec(patients=40, single_visit_patients=20, seed=5)
    text, rules, _ = generate_synthetic(spec)
    for line in text.splitlines():
        for v in json.loads(line)["visits"]:
            dx = [int(c[1:]) for c in v["dx"]]
            assert sorted(int(c[1:]) for c in v["rx"]) == sorted(apply_rules(dx, rules))


def test_synthetic_is_byte_identical_per_seed():
    spec = SyntheticSpec(patients=200, seed=11)
    assert generate_synthetic(spec)[0] == generate_synthetic(spec)[0]
    assert generate_synthetic(spec)[0] != generate_synthetic(spec, seed=12)[0]


def test_synthetic_single_visit_patients():
    text, _, _ = generate_synthetic(SyntheticSpec(patients=10, single_visit_patients=7, seed=0))
    c = parse_records(text.splitlines())
    assert len(c.single_visit) == 7
    assert len(c.multi_visit) == 10


def test_synthetic_hierarchy_covers_every_code():
    _, _, hier = generate_synthetic(SyntheticSpec(patients=5, seed=0))
    children = {line.split("\t")[0] for line in hier["dx"].splitlines()}
    assert {f"D{i:03d}" for i in range(60)} <= children


def test_synthetic_empty_rule_table_rejected():
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(patients=5, rules={0: (), 3: ()}))


def test_synthetic_spec_file(tmp_path):
    path = tmp_path / "spec.ini"
    path.write_text("[synthetic]\npatients = 12\nnoise = 0.1\nrules = 0:1; 2:0,3\nseed = 9\n")
    spec = SyntheticSpec.from_file(path)
    assert (spec.patients, spec.noise, spec.seed) == (12, 0.1, 9)
    assert spec.rules == {0: (1,), 2: (0, 3)}


def test_synthetic_spec_unknown_key(tmp_path):
    path = tmp_path / "spec.ini"
    path.write_text("[synthetic]\npatinets = 12\n")
    with pytest.raises(ConfigError, match="patinets"):
        SyntheticSpec.from_file(path)


def test_round_trip(tmp_path):
    text, _, _ = generate_synthetic(SyntheticSpec(patients=25, single_visit_patients=5, seed=2))
    c = parse_records(text.splitlines())
    write_records(c, tmp_path / "r.jsonl")
    back = load_records(tmp_path / "r.jsonl")
    assert back.diagnosis_vocab == c.diagnosis_vocab
    assert back.medication_vocab == c.medication_vocab
    assert back.patients == c.patients
    assert format_records(back) == format_records(c)
