import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dermclf.data import (
    Dataset,
    ImageRecord,
    apply_split_manifest,
    infer_label_space,
    parse_ground_truth,
    read_split_manifest,
    stratified_split,
    validation_count,
    write_ground_truth,
    write_split_manifest,
)
from dermclf.errors import FormatError, LabelError, MissingImagesError, SplitError
from dermclf.labels import DERMOSCOPY_LABELS, LabelSpace

from conftest import RGB3, one_hot_csv_text

ISIC_COUNTS = [1113, 6705, 514, 327, 1099, 115, 142]


def dataset_from_counts(counts, label_space):
    records = []
    for label, n in enumerate(counts):
        for i in range(n):
            records.append(ImageRecord(f"C{label}_{i:05d}", label=label))
    return Dataset(records=tuple(records), label_space=label_space)


# ---------------------------------------------------------------- parsing


def test_parse_infers_label_space():
    text = one_hot_csv_text(RGB3, [("a", 0), ("b", 2)])
    ds = parse_ground_truth(text.encode(), None, label_space=None)
    assert ds.label_space.codes == ("RED", "GREEN", "BLUE")
    assert [r.label for r in ds.records] == [0, 2]


def test_parse_canonical_header_reuses_dermoscopy_space():
    text = one_hot_csv_text(DERMOSCOPY_LABELS, [("ISIC_0000000", 1)])
    ds = parse_ground_truth(text.encode(), None, label_space=None)
    assert ds.label_space is DERMOSCOPY_LABELS


def test_parse_accepts_stream_and_path(tmp_path):
    text = one_hot_csv_text(RGB3, [("a", 1)])
    path = tmp_path / "gt.csv"
    path.write_text(text)
    for source in (path, str(path), text.encode(), io.StringIO(text)):
        ds = parse_ground_truth(source, None, label_space=RGB3)
        assert ds.records[0].label == 1


def test_parse_rejects_wrong_header():
    bad = "image,RED,BLUE,GREEN\na,1.0,0.0,0.0\n"
    with pytest.raises(FormatError, match="column"):
        parse_ground_truth(bad.encode(), None, label_space=RGB3)


def test_parse_rejects_multi_hot():
    bad = "image,RED,GREEN,BLUE\na,1.0,1.0,0.0\n"
    with pytest.raises(LabelError, match="exactly one"):
        parse_ground_truth(bad.encode(), None, label_space=RGB3)


def test_parse_rejects_soft_values():
    bad = "image,RED,GREEN,BLUE\na,0.5,0.5,0.0\n"
    with pytest.raises(LabelError):
        parse_ground_truth(bad.encode(), None, label_space=RGB3)


def test_parse_rejects_duplicate_id():
    bad = one_hot_csv_text(RGB3, [("a", 0), ("a", 1)])
    with pytest.raises(FormatError, match="duplicate"):
        parse_ground_truth(bad.encode(), None, label_space=RGB3)


def test_parse_collects_all_missing_images(tiny_tree):
    tmp_path, image_dir, ds = tiny_tree
    rows = [(r.image_id, r.label) for r in ds.records]
    rows += [("GHOST_1", 0), ("GHOST_2", 1)]
    text = one_hot_csv_text(RGB3, rows)
    with pytest.raises(MissingImagesError) as exc_info:
        parse_ground_truth(text.encode(), image_dir, label_space=RGB3)
    assert exc_info.value.image_ids == ["GHOST_1", "GHOST_2"]


def test_parse_resolves_image_paths(tiny_tree):
    tmp_path, image_dir, ds = tiny_tree
    text = one_hot_csv_text(RGB3, [(r.image_id, r.label) for r in ds.records])
    parsed = parse_ground_truth(text.encode(), image_dir, label_space=RGB3)
    assert all(r.image_path is not None and r.image_path.exists() for r in parsed.records)


def test_ground_truth_round_trip(tmp_path):
    ds = dataset_from_counts([3, 2, 4], RGB3)
    path = tmp_path / "gt.csv"
    write_ground_truth(ds, path)
    back = parse_ground_truth(path, None, label_space=None)
    assert back.label_space.codes == ds.label_space.codes
    assert {(r.image_id, r.label) for r in back.records} == {
        (r.image_id, r.label) for r in ds.records
    }


def test_infer_label_space_needs_image_column():
    with pytest.raises(FormatError):
        infer_label_space(["id", "RED", "GREEN"])


# ---------------------------------------------------------------- rounding


@pytest.mark.parametrize(
    "count,expected",
    list(zip(ISIC_COUNTS, [111, 671, 51, 33, 110, 12, 14])),
)
def test_validation_count_tenth(count, expected):
    assert validation_count(count, 0.10) == expected


def test_validation_count_half_rounds_up():
    assert validation_count(5, 0.5) == 3  # 2.5 -> 3
    assert validation_count(15, 0.1) == 2  # 1.5 -> 2


def test_validation_count_floor_is_one():
    assert validation_count(3, 0.1) == 1
    assert validation_count(2, 0.01) == 1


# ---------------------------------------------------------------- splitting


def test_split_isic_counts():
    ds = dataset_from_counts(ISIC_COUNTS, DERMOSCOPY_LABELS)
    split = stratified_split(ds, 0.10, seed=0)
    assert split.validation.class_counts == [111, 671, 51, 33, 110, 12, 14]
    assert split.train.class_counts == [
        t - v for t, v in zip(ISIC_COUNTS, [111, 671, 51, 33, 110, 12, 14])
    ]


def test_split_deterministic_and_seed_sensitive():
    ds = dataset_from_counts([30, 20, 10], RGB3)
    a = stratified_split(ds, 0.2, seed=7)
    b = stratified_split(ds, 0.2, seed=7)
    c = stratified_split(ds, 0.2, seed=8)
    assert a.validation.image_ids == b.validation.image_ids
    assert set(a.validation.image_ids) != set(c.validation.image_ids)


def test_split_ignores_record_order():
    ds = dataset_from_counts([12, 8], LabelSpace(codes=("A", "B")))
    reversed_ds = Dataset(records=tuple(reversed(ds.records)), label_space=ds.label_space)
    a = stratified_split(ds, 0.25, seed=3)
    b = stratified_split(reversed_ds, 0.25, seed=3)
    assert set(a.validation.image_ids) == set(b.validation.image_ids)


def test_split_singleton_class_raises():
    ds = dataset_from_counts([5, 1], LabelSpace(codes=("A", "B")))
    with pytest.raises(SplitError, match="'B'"):
        stratified_split(ds, 0.2, seed=0)


def test_split_unlabeled_record_raises():
    ds = Dataset(records=(ImageRecord("x"), ImageRecord("y")), label_space=RGB3)
    with pytest.raises(LabelError):
        stratified_split(ds, 0.2, seed=0)


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_split_fraction_range(fraction):
    ds = dataset_from_counts([4, 4], LabelSpace(codes=("A", "B")))
    with pytest.raises(ValueError):
        stratified_split(ds, fraction, seed=0)


@settings(deadline=None, max_examples=60)
@given(
    counts=st.lists(st.integers(min_value=2, max_value=40), min_size=2, max_size=7),
    fraction=st.floats(min_value=0.05, max_value=0.5),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_split_partition_invariants(counts, fraction, seed):
    space = LabelSpace(codes=tuple(f"K{i}" for i in range(len(counts))))
    ds = dataset_from_counts(counts, space)
    split = stratified_split(ds, fraction, seed)
    train_ids = set(split.train.image_ids)
    val_ids = set(split.validation.image_ids)
    assert not train_ids & val_ids
    assert train_ids | val_ids == set(ds.image_ids)
    for label, count in enumerate(counts):
        assert split.validation.class_counts[label] == validation_count(count, fraction)


# ---------------------------------------------------------------- manifests


def test_manifest_round_trip(tmp_path):
    ds = dataset_from_counts([9, 6, 3], RGB3)
    split = stratified_split(ds, 0.3, seed=11)
    path = tmp_path / "split.csv"
    write_split_manifest(split, path)
    manifest = read_split_manifest(path)
    rebuilt = apply_split_manifest(ds, manifest)
    assert set(rebuilt.validation.image_ids) == set(split.validation.image_ids)
    assert set(rebuilt.train.image_ids) == set(split.train.image_ids)


def test_manifest_byte_identical_for_same_seed(tmp_path):
    ds = dataset_from_counts([9, 6, 3], RGB3)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_split_manifest(stratified_split(ds, 0.3, seed=5), p1)
    write_split_manifest(stratified_split(ds, 0.3, seed=5), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_manifest_rejects_bad_subset(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("image,subset\na,test\n")
    with pytest.raises(FormatError):
        read_split_manifest(path)


def test_subset_unknown_id_raises():
    ds = dataset_from_counts([3, 3], LabelSpace(codes=("A", "B")))
    with pytest.raises(KeyError):
        ds.subset(["NOPE"])
