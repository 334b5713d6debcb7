import os

import numpy as np
import pytest

from mpfm.backend.managers.data import DataManager, Dataset, generate, load, save
from mpfm.backend.models.config import SyntheticSpec
from mpfm.backend.models.enum import Split, UnseenKind
from mpfm.backend.models.errors import (
    DatasetParseError,
    FormatVersionError,
    RejectedInputError,
)
from mpfm.backend.scoring.heads import FeatureSample
from mpfm.backend.utils.metrics import roc_auc

SMALL = dict(n_train_normal=40, n_train_anomaly=4, n_test_normal=30, n_test_anomaly=10)


def test_split_sizes_labels_and_ids():
    spec = SyntheticSpec(**SMALL)
    train_normal, train_anomaly, test = generate(spec)
    assert (len(train_normal), len(train_anomaly), len(test)) == (40, 4, 40)
    assert not train_normal.labels.any()
    assert train_anomaly.labels.all()
    assert test.labels.sum() == 10
    ids = [s.sample_id for d in (train_normal, train_anomaly, test) for s in d.samples]
    assert ids == list(range(len(ids)))
    assert all(s.patches.shape == (16, 8) for s in test.samples)


def test_generation_is_deterministic():
    spec = SyntheticSpec(**SMALL)
    for a, b in zip(generate(spec), generate(spec)):
        assert a.samples == b.samples


def test_seeds_change_the_draws():
    a = generate(SyntheticSpec(**SMALL, seed=0))[0]
    b = generate(SyntheticSpec(**SMALL, seed=1))[0]
    assert a.samples != b.samples


def test_seen_anomalies_shift_a_patch_subset():
    spec = SyntheticSpec(**SMALL)
    _, train_anomaly, _ = generate(spec)
    n_offset = round(spec.anomalous_patch_fraction * spec.n_patches)
    for sample in train_anomaly.samples:
        shifted = sample.patches[:, spec.seen_axis] > spec.seen_magnitude / 2
        assert shifted.sum() == n_offset


def test_held_out_mode_anomalies():
    spec = SyntheticSpec(**SMALL, unseen_kind=UnseenKind.HELD_OUT_MODE, mode_gap_fraction=0.0)
    test = generate(spec)[2]
    a = spec.mode_distance / np.sqrt(2)
    anomalies = [s for s in test.samples if s.label == 1]
    for sample in anomalies:
        assert sample.pooled[0] == pytest.approx(-a, abs=1.5)


def test_large_offset_unseen_anomalies():
    spec = SyntheticSpec(**SMALL, unseen_kind=UnseenKind.LARGE_OFFSET, mode_gap_fraction=0.0)
    test = generate(spec)[2]
    for sample in (s for s in test.samples if s.label == 1):
        assert (sample.patches[:, spec.unseen_axis] > spec.unseen_magnitude / 2).sum() == 4


def test_seen_kind_in_test():
    spec = SyntheticSpec(**SMALL, seen_kind_in_test=True)
    test = generate(spec)[2]
    anomalies = [s for s in test.samples if s.label == 1]
    seen = [s for s in anomalies if _seen_shifted(spec, s).sum() == 4]
    assert len(seen) == 5
    assert len(_between_modes(spec, anomalies)) == round(0.25 * 5)


def _seen_shifted(spec, sample):
    x = sample.patches[:, spec.seen_axis]
    return (x > spec.seen_magnitude / 2) & (x < (spec.seen_magnitude + spec.unseen_magnitude) / 2)


def _between_modes(spec, samples):
    a = spec.mode_distance / np.sqrt(2)
    gap = np.full(spec.n_modes, a / spec.n_modes)
    return [s for s in samples if np.all(np.abs(s.pooled[: spec.n_modes] - gap) < a / 4)]


def test_two_sided_anomalies_keep_the_mean_patch():
    spec = SyntheticSpec(**SMALL, mode_gap_fraction=0.0)
    assert spec.unseen_kind == UnseenKind.TWO_SIDED_OFFSET
    test = generate(spec)[2]
    half = round(spec.anomalous_patch_fraction * spec.n_patches) // 2
    cut = (spec.seen_magnitude + spec.unseen_magnitude) / 2
    anomalies = [s for s in test.samples if s.label == 1]
    assert len(anomalies) == 10
    for sample in anomalies:
        x = sample.patches[:, spec.seen_axis]
        assert (x > cut).sum() == half and (x < -cut).sum() == half

    # same draws without the shifts: the mean patch over all of them is unchanged
    pooled = np.array([s.pooled for s in anomalies])
    se = spec.mode_spread / np.sqrt(spec.n_patches * len(anomalies))
    assert abs(pooled[:, spec.seen_axis].mean()) < 5 * se


@pytest.mark.parametrize("fraction, expected", [(0.0, 0), (0.25, 2), (0.5, 5), (1.0, 10)])
def test_mode_gap_share(fraction, expected):
    spec = SyntheticSpec(**SMALL, mode_gap_fraction=fraction)
    anomalies = [s for s in generate(spec)[2].samples if s.label == 1]
    assert len(_between_modes(spec, anomalies)) == expected


@pytest.mark.parametrize(
    "kind", [UnseenKind.TWO_SIDED_OFFSET, UnseenKind.HELD_OUT_MODE, UnseenKind.LARGE_OFFSET]
)
def test_nearest_mode_distance_separates_the_test_split(kind):
    spec = SyntheticSpec(n_train_normal=10, n_train_anomaly=1, unseen_kind=kind)
    test = generate(spec)[2]
    centers = spec.mode_distance / np.sqrt(2) * np.eye(spec.feature_dim)[: spec.n_modes]
    patches = test.as_batch().patches
    # worst patch of each sample against its nearest mode center
    dist = np.linalg.norm(patches[:, :, None, :] - centers[None, None], axis=-1)
    score = dist.min(axis=-1).max(axis=-1)
    assert roc_auc(score, test.labels) >= 0.99


def test_invalid_spec_is_rejected():
    with pytest.raises(RejectedInputError):
        generate(SyntheticSpec(mode_distance=2.0, mode_spread=1.0))
    with pytest.raises(RejectedInputError):
        generate(SyntheticSpec(seen_axis=1))


@pytest.mark.parametrize(
    "overrides",
    [
        dict(mode_gap_fraction=1.5),
        dict(mode_gap_fraction=0.5, n_modes=1),
        dict(n_patches=1, mode_gap_fraction=0.0),
        dict(unseen_magnitude=8.0),
        dict(unseen_kind="sideways"),
    ],
)
def test_invalid_unseen_families_are_rejected(overrides):
    with pytest.raises(RejectedInputError):
        generate(SyntheticSpec(**SMALL | overrides))


def test_save_load_is_bit_exact(tmp_path):
    for dataset in generate(SyntheticSpec(**SMALL)):
        path = str(tmp_path / f"{dataset.split}.csv")
        save(dataset, path)
        loaded = load(path)
        assert loaded.split == dataset.split
        assert loaded.provenance == dataset.provenance
        assert loaded.samples == dataset.samples


def test_awkward_values_round_trip(tmp_path):
    patches = np.array([[0.1, -0.0, 1e-310], [np.pi, 1e300, -2.5e-17]])
    dataset = Dataset([FeatureSample(7, patches, 1)], Split.TEST, "hand-made, with comma")
    save(dataset, str(tmp_path / "d.csv"))
    loaded = load(str(tmp_path / "d.csv"))
    assert loaded.samples == dataset.samples
    assert loaded.provenance == "hand-made, with comma"


def test_empty_dataset_round_trip(tmp_path):
    path = str(tmp_path / "empty.csv")
    save(Dataset([], Split.TRAIN_ANOMALY), path)
    with open(path, encoding="utf-8") as f:
        assert f.read().splitlines()[1] == "sample_id,patch_id,label"
    assert len(load(path)) == 0


def _write(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text, encoding="utf-8")
    return str(path)


HEADER = "#mpfm-dataset,1,test,x\nsample_id,patch_id,label,f0,f1\n"


@pytest.mark.parametrize(
    "body, line",
    [
        ("0,0,0,1.0\n", 3),
        ("0,0,0,1.0,abc\n", 3),
        ("0,0,2,1.0,2.0\n", 3),
        ("0,0,0,1.0,2.0\n0,2,0,1.0,2.0\n", 4),
        ("0,0,0,1.0,2.0\n0,1,1,1.0,2.0\n", 4),
        ("1,0,0,1.0,2.0\n0,0,0,1.0,2.0\n", 4),
        ("0,1,0,1.0,2.0\n", 3),
        ("0,0,0,1.0,nan\n", 3),
        ("x,0,0,1.0,2.0\n", 3),
    ],
)
def test_parse_errors_name_the_line(tmp_path, body, line):
    with pytest.raises(DatasetParseError) as info:
        load(_write(tmp_path, HEADER + body))
    assert info.value.line == line


def test_version_and_header_checks(tmp_path):
    with pytest.raises(FormatVersionError):
        load(_write(tmp_path, "#mpfm-dataset,2,test,x\nsample_id,patch_id,label\n"))
    with pytest.raises(DatasetParseError):
        load(_write(tmp_path, "sample_id,patch_id,label\n"))
    with pytest.raises(DatasetParseError):
        load(_write(tmp_path, "#mpfm-dataset,1,test,x\nid,patch,label,f0\n"))
    with pytest.raises(DatasetParseError):
        load(_write(tmp_path, ""))


def test_train_normal_split_rejects_anomalies(tmp_path):
    with pytest.raises(RejectedInputError):
        Dataset([FeatureSample(0, np.zeros((1, 2)), 1)], Split.TRAIN_NORMAL)
    with pytest.raises(DatasetParseError):
        load(_write(tmp_path, "#mpfm-dataset,1,train-normal,x\nsample_id,patch_id,label,f0\n0,0,1,1.0\n"))


def test_duplicate_ids_are_rejected():
    sample = FeatureSample(0, np.zeros((1, 2)))
    with pytest.raises(RejectedInputError):
        Dataset([sample, sample], Split.TEST)
    with pytest.raises(RejectedInputError):
        Dataset([], "validation")


def test_data_manager_writes_and_reloads(tmp_path):
    spec = SyntheticSpec(**SMALL)
    manager = DataManager(spec)
    generated = manager.get()
    paths = manager.write(str(tmp_path), generated)
    assert sorted(os.path.basename(p) for p in paths) == [
        "test.csv", "train-anomaly.csv", "train-normal.csv",
    ]
    reloaded = DataManager(spec, str(tmp_path)).get()
    for a, b in zip(generated, reloaded):
        assert a.split == b.split and a.samples == b.samples
