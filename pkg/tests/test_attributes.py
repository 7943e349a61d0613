import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpraudit import (
    AttributeSchema,
    InputError,
    JointDistribution,
    ReferenceSpec,
    SampleSet,
    decode_vector,
    encode_record,
    load_proportions,
    load_samples,
    load_schema,
    reference_from_proportions,
)


def test_feature_dim_small(gender_age):
    assert gender_age.feature_dim == 4
    assert gender_age.feature_names == ["gender=male", "gender=female", "age=young", "age=old"]


def test_feature_dim_seven_races():
    races = ["white", "black", "latino", "east_asian", "southeast_asian", "indian", "middle_eastern"]
    doc = {"attributes": [{"name": "race", "categories": races},
                          {"name": "gender", "categories": ["m", "f"]},
                          {"name": "age", "categories": ["young", "old"]}]}
    assert load_schema(json.dumps(doc)).feature_dim == 11


@pytest.mark.parametrize(
    "doc",
    [
        {"attributes": [{"name": "g", "categories": ["a", "b"]}, {"name": "g", "categories": ["c", "d"]}]},
        {"attributes": [{"name": "g", "categories": ["a"]}]},
        {"attributes": [{"name": "g", "categories": ["a", "a"]}]},
        {"attributes": [{"name": "g", "categories": ["a|b", "c"]}]},
        {"attributes": []},
        {"attrs": []},
    ],
)
def test_bad_schemas(doc):
    with pytest.raises(InputError):
        load_schema(json.dumps(doc))


def test_bad_schema_json():
    with pytest.raises(InputError, match="not valid JSON"):
        load_schema("{")


def test_encode_record(gender_age):
    np.testing.assert_array_equal(encode_record(gender_age, {"gender": "male", "age": "young"}), [1, -1, 1, -1])
    np.testing.assert_array_equal(encode_record(gender_age, {"gender": "female", "age": "old"}), [-1, 1, -1, 1])
    with pytest.raises(InputError):
        encode_record(gender_age, {"gender": "unknown_value", "age": "old"})
    with pytest.raises(InputError):
        encode_record(gender_age, {"gender": "male"})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["male", "female"]), min_size=1, max_size=1), st.sampled_from(["young", "old"]))
def test_encode_decode_roundtrip(g, a):
    schema = AttributeSchema.from_pairs([("gender", ["male", "female"]), ("age", ["young", "old"])])
    rec = {"gender": g[0], "age": a}
    x = encode_record(schema, rec)
    # exactly one +1 per attribute block
    for block in schema.blocks():
        assert (x[block] == 1).sum() == 1
    assert decode_vector(schema, x) == rec


def test_load_samples_categorical(gender_age):
    rows = ["gender,age"] + ["male,young"] * 600 + ["female,old"] * 400
    S = load_samples(gender_age, "\n".join(rows))
    assert S.k == 1000
    assert np.isclose(S.weights.sum(), 1.0)


def test_load_samples_encoded(gender_age):
    text = "gender=male,gender=female,age=young,age=old\n1,0,0,1\n0,1,1,0\n"
    S = load_samples(gender_age, text)
    np.testing.assert_array_equal(S.vectors, [[1, -1, -1, 1], [-1, 1, 1, -1]])
    pm = load_samples(gender_age, "gender=male,gender=female,age=young,age=old\n1,-1,-1,1\n")
    np.testing.assert_array_equal(pm.vectors, [[1, -1, -1, 1]])


def test_load_samples_errors(gender_age):
    with pytest.raises(InputError, match="empty sample set"):
        load_samples(gender_age, "gender,age\n")
    with pytest.raises(InputError, match="empty sample set"):
        load_samples(gender_age, "")
    with pytest.raises(InputError, match="row 1"):
        load_samples(gender_age, "gender,age\nmale,young\nrobot,old\n")
    with pytest.raises(InputError, match="missing"):
        load_samples(gender_age, "gender\nmale\n")
    with pytest.raises(InputError, match="exactly one"):
        load_samples(gender_age, "gender=male,gender=female,age=young,age=old\n1,1,0,1\n")


def test_sample_set_is_read_only(gender_age):
    S = SampleSet.from_records(gender_age, [{"gender": "male", "age": "old"}])
    with pytest.raises(ValueError):
        S.vectors[0, 0] = 0
    assert S.records() == [{"gender": "male", "age": "old"}]


def test_weights_must_sum_to_one(gender_age):
    X = gender_age.encode_cells([("male", "young"), ("female", "old")])
    with pytest.raises(InputError, match="sum"):
        SampleSet(gender_age, X, [0.5, 0.6])


def test_reference_from_proportions():
    schema = AttributeSchema.from_pairs([("g", ["A", "B"])])
    ref = reference_from_proportions(schema, {"A": 0.5, "B": 0.5})
    assert ref.is_exact
    point = reference_from_proportions(schema, {"A": 1.0, "B": 0.0})
    assert point.as_sample_set().k == 1
    with pytest.raises(InputError, match="sum to 1.2"):
        reference_from_proportions(schema, {"A": 0.6, "B": 0.6})


def test_joint_distribution_sampling(gender_age):
    p = JointDistribution(gender_age, {"male|young": 0.7, "female|old": 0.3})
    a, b = p.sample(2000, 5), p.sample(2000, 5)
    np.testing.assert_array_equal(a.vectors, b.vectors)
    frac = (a.vectors[:, 0] == 1).mean()
    assert abs(frac - 0.7) < 0.04
    with pytest.raises(InputError):
        JointDistribution(gender_age, {"male|robot": 1.0})


def test_reference_spec_needs_exactly_one(gender_age):
    with pytest.raises(InputError):
        ReferenceSpec()
    p = JointDistribution(gender_age, {"male|young": 1.0})
    with pytest.raises(InputError):
        ReferenceSpec(sample_set=p.as_sample_set(), exact_distribution=p)


def test_load_proportions(gender_age):
    d = load_proportions(gender_age, '{"male|young": 0.25, "male|old": 0.25, "female|young": 0.5}')
    assert np.isclose(d.vector().sum(), 1.0)
    with pytest.raises(InputError):
        load_proportions(gender_age, "[]")
