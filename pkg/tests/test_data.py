"""NIfTI container round trips, phantom synthesis, preprocessing pipeline."""

import gzip
import os

import numpy as np
import pytest

import nifti_reader
from voxelseg.data import (
    NiftiVolume, Sample, Subject, augment, center_crop_start, generate_phantom,
    list_subjects, load_nifti, load_subject, one_hot, preprocess_subject,
    remap_labels, save_nifti, save_subject, split_dataset, zscore,
)
from voxelseg.data.phantom import _BASE
from voxelseg.engine import Rng
from voxelseg.errors import DataError, NiftiError


# ---------------------------------------------------------------------------
# NIfTI


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.float32])
@pytest.mark.parametrize("ext", [".nii", ".nii.gz"])
def test_nifti_round_trip_lossless(tmp_path, gen, dtype, ext):
    if np.issubdtype(dtype, np.integer):
        data = gen.integers(0, 100, size=(5, 4, 3)).astype(dtype)
    else:
        data = gen.standard_normal((5, 4, 3)).astype(dtype)
    path = tmp_path / f"vol{ext}"
    save_nifti(NiftiVolume(data, descrip="round trip"), path)
    back = load_nifti(path)
    assert back.data.dtype == dtype
    assert np.array_equal(back.data, data)
    assert back.descrip == "round trip"


@pytest.mark.parametrize("shape", [(7,), (6, 5), (4, 4, 4)])
def test_nifti_ranks(tmp_path, gen, shape):
    data = gen.standard_normal(shape).astype(np.float32)
    path = tmp_path / "r.nii"
    save_nifti(NiftiVolume(data), path)
    assert np.array_equal(load_nifti(path).data, data)


def test_nifti_gzip_writes_are_reproducible(tmp_path, gen):
    data = gen.standard_normal((8, 8, 8)).astype(np.float32)
    p1, p2 = tmp_path / "a.nii.gz", tmp_path / "b.nii.gz"
    save_nifti(NiftiVolume(data), p1)
    save_nifti(NiftiVolume(data), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_nifti_scl_scaling(tmp_path):
    raw = np.arange(12, dtype=np.int16).reshape(3, 4)
    path = tmp_path / "scl.nii"
    save_nifti(NiftiVolume(raw, scl_slope=0.5, scl_inter=10.0), path)
    vol = load_nifti(path)
    assert np.array_equal(vol.data, raw)                 # buffer untouched
    assert np.allclose(vol.floats(), raw * 0.5 + 10.0)   # scaling on demand
    plain = NiftiVolume(raw)                             # slope 0 -> no scaling
    assert np.array_equal(plain.floats(), raw.astype(np.float32))


def test_nifti_readable_by_independent_parser(tmp_path, gen):
    data = (gen.standard_normal((6, 5, 4)) * 50).astype(np.int16)
    path = tmp_path / "x.nii.gz"
    save_nifti(NiftiVolume(data, scl_slope=2.0, scl_inter=-1.0, descrip="indep"), path)
    parsed = nifti_reader.read_nifti_independent(path)
    assert parsed["shape"] == (6, 5, 4)
    assert parsed["datatype"] == 4
    assert parsed["scl_slope"] == 2.0
    assert parsed["scl_inter"] == -1.0
    assert parsed["descrip"] == "indep"
    assert parsed["vox_offset"] == 352
    assert np.array_equal(parsed["data"], data)


def test_nifti_reads_big_endian(tmp_path, gen):
    data = (gen.standard_normal((3, 4, 5)) * 20).astype(np.int16)
    path = tmp_path / "be.nii"
    nifti_reader.write_nifti_big_endian(path, data)
    vol = load_nifti(path)
    assert np.array_equal(vol.data, data)
    assert vol.data.dtype == np.int16  # native byte order after load


def test_nifti_rejections(tmp_path):
    with pytest.raises(NiftiError):
        NiftiVolume(np.zeros((2, 2), dtype=np.float64))   # unsupported dtype
    with pytest.raises(NiftiError):
        NiftiVolume(np.zeros((2, 2, 2, 2), dtype=np.uint8))  # rank 4

    good = tmp_path / "g.nii"
    save_nifti(NiftiVolume(np.ones((2, 2, 2), dtype=np.uint8)), good)
    blob = good.read_bytes()

    bad_magic = tmp_path / "m.nii"
    bad_magic.write_bytes(blob[:344] + b"XXXX" + blob[348:])
    with pytest.raises(NiftiError):
        load_nifti(bad_magic)

    trunc = tmp_path / "t.nii"
    trunc.write_bytes(blob[:200])
    with pytest.raises(NiftiError):
        load_nifti(trunc)

    short_payload = tmp_path / "p.nii"
    short_payload.write_bytes(blob[:-4])
    with pytest.raises(NiftiError):
        load_nifti(short_payload)

    with pytest.raises(NiftiError):
        load_nifti(tmp_path / "missing.nii")


# ---------------------------------------------------------------------------
# phantoms


def test_phantom_determinism_and_labels():
    a = generate_phantom(seed=11, size=24, count=3)
    b = generate_phantom(seed=11, size=24, count=3)
    assert [s.id for s in a] == ["phantom_000", "phantom_001", "phantom_002"]
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.mask, sb.mask)
        for ma, mb in zip(sa.modalities, sb.modalities):
            assert np.array_equal(ma, mb)
        assert set(np.unique(sa.mask)) == {0, 1, 2, 3}
        assert sa.shape == (24, 24, 24)
    c = generate_phantom(seed=12, size=24, count=1)
    assert not np.array_equal(a[0].mask, c[0].mask)


def test_phantom_intensities_decode_to_labels():
    # labels must stay recoverable from intensities: nearest base wins
    subj = generate_phantom(seed=3, size=32, count=1)[0]
    stack = np.stack(subj.modalities).astype(np.float64)   # (4, D, H, W)
    dists = np.stack([
        np.abs(stack - _BASE[:, lab].reshape(4, 1, 1, 1)).sum(axis=0)
        for lab in range(4)
    ])
    decoded = dists.argmin(axis=0)
    assert (decoded == subj.mask).mean() > 0.995


def test_phantom_preconditions():
    with pytest.raises(DataError):
        generate_phantom(seed=0, size=8, count=1)
    with pytest.raises(DataError):
        generate_phantom(seed=0, size=32, count=0)


# ---------------------------------------------------------------------------
# preprocessing


def test_remap_labels():
    raw = np.array([0, 1, 2, 4, 4, 0])
    assert np.array_equal(remap_labels(raw), [0, 1, 2, 3, 3, 0])
    already = np.array([0, 1, 2, 3])
    assert np.array_equal(remap_labels(already), already)
    with pytest.raises(DataError):
        remap_labels(np.array([0, 5]))
    with pytest.raises(DataError):
        remap_labels(np.array([-1, 0]))


def test_one_hot_and_labels_inverse(gen):
    labels = gen.integers(0, 4, size=(3, 3, 3))
    oh = one_hot(labels)
    assert oh.shape == (4, 3, 3, 3)
    assert np.array_equal(oh.sum(axis=0), np.ones((3, 3, 3), dtype=np.float32))
    s = Sample(image=np.zeros((4, 3, 3, 3), dtype=np.float32), target=oh)
    assert np.array_equal(s.labels, labels)


def test_center_crop_start_brats_values():
    assert center_crop_start(240, 128) == 56
    assert center_crop_start(155, 128) == 13
    assert center_crop_start(128, 128) == 0
    with pytest.raises(DataError):
        center_crop_start(100, 128)


def test_zscore_properties(gen):
    x = gen.standard_normal((16, 16, 16)) * 7.0 + 3.0
    z = zscore(x)
    assert z.dtype == np.float32
    assert abs(float(z.mean())) < 1e-4
    assert abs(float(z.std()) - 1.0) < 1e-3
    flat = zscore(np.full((4, 4, 4), 2.5))
    assert np.all(np.isfinite(flat))
    assert np.all(flat == 0.0)


def test_preprocess_brats_shaped_subject(gen):
    vols = [gen.standard_normal((240, 240, 155)).astype(np.float32) for _ in range(4)]
    # plant a marker at the expected crop origin for each modality
    for v in vols:
        v[56, 56, 13] = 1000.0
    mask = np.zeros((240, 240, 155), dtype=np.uint8)
    mask[100:140, 100:140, 60:100] = 2
    mask[110:130, 110:130, 70:90] = 1
    mask[115:125, 115:125, 75:85] = 4
    subj = Subject(id="case", modalities=vols, mask=mask)
    sample = preprocess_subject(subj, crop_to=(128, 128, 128))
    assert sample.image.shape == (4, 128, 128, 128)
    assert sample.target.shape == (4, 128, 128, 128)
    # marker voxel must land at the crop origin
    for c in range(4):
        assert sample.image[c].argmax() == 0
    # raw label 4 must be gone, class 3 present
    assert set(np.unique(sample.labels)) == {0, 1, 2, 3}
    for c in range(4):
        assert abs(float(sample.image[c].mean())) < 1e-4
        assert abs(float(sample.image[c].std()) - 1.0) < 1e-3


def test_preprocess_native_extents():
    subj = generate_phantom(seed=5, size=20, count=1)[0]
    sample = preprocess_subject(subj, crop_to=None)
    assert sample.image.shape == (4, 20, 20, 20)


def test_preprocess_crop_too_large():
    subj = generate_phantom(seed=5, size=20, count=1)[0]
    with pytest.raises(DataError):
        preprocess_subject(subj, crop_to=(32, 32, 32))


# ---------------------------------------------------------------------------
# augmentation


def _phantom_sample(seed=7, size=16):
    subj = generate_phantom(seed=seed, size=size, count=1)[0]
    return preprocess_subject(subj, crop_to=None)


def test_augment_noop_at_zero_probability():
    s = _phantom_sample()
    out = augment(s, Rng(1), subject_index=0, epoch=0, p=0.0)
    assert np.array_equal(out.image, s.image)
    assert np.array_equal(out.target, s.target)


def test_augment_keyed_determinism():
    s = _phantom_sample()
    a = augment(s, Rng(9), subject_index=3, epoch=5, p=0.9)
    b = augment(s, Rng(9), subject_index=3, epoch=5, p=0.9)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.target, b.target)
    c = augment(s, Rng(9), subject_index=3, epoch=6, p=0.9)
    assert not np.array_equal(a.image, c.image)


def test_augment_preserves_one_hot_validity():
    s = _phantom_sample()
    rng = Rng(17)
    for draw in range(100):
        out = augment(s, rng, subject_index=draw % 4, epoch=draw, p=0.9)
        out.validate()  # raises if the mask stops being one-hot
        assert out.image.dtype == np.float32


def test_augment_flip_only_geometry():
    # flip is the first coin; find a key where only the flip fires
    s = _phantom_sample()
    rng = Rng(23)
    for epoch in range(400):
        gen = rng.generator("augment", 0, epoch)
        coins = gen.random(4) < 0.45
        if coins[0] and not coins[1] and not coins[2] and not coins[3]:
            out = augment(s, rng, subject_index=0, epoch=epoch, p=0.45)
            assert np.array_equal(out.image, s.image[..., ::-1])
            assert np.array_equal(out.target, s.target[..., ::-1])
            return
    pytest.fail("no flip-only draw found in 400 epochs")


# ---------------------------------------------------------------------------
# split + subject I/O


def test_split_sizes_and_determinism():
    ids = [f"s{i:02d}" for i in range(10)]
    train, test = split_dataset(ids, 0.75, Rng(4))
    assert len(train) == 8 and len(test) == 2    # ceil(7.5)
    assert sorted(train + test) == ids
    train2, test2 = split_dataset(ids, 0.75, Rng(4))
    assert train == train2 and test == test2
    train3, _ = split_dataset(ids, 0.75, Rng(5))
    assert train != train3
    all_train, none = split_dataset(ids, 1.0, Rng(4))
    assert len(all_train) == 10 and none == []


def test_split_rejections():
    with pytest.raises(DataError):
        split_dataset([], 0.5, Rng(0))
    with pytest.raises(DataError):
        split_dataset(["a"], 0.0, Rng(0))
    with pytest.raises(DataError):
        split_dataset(["a"], 1.5, Rng(0))


def test_subject_io_round_trip(tmp_path):
    subj = generate_phantom(seed=2, size=16, count=2)[1]
    save_subject(subj, tmp_path)
    assert list_subjects(tmp_path) == ["phantom_001"]
    back = load_subject(tmp_path, "phantom_001")
    assert back.id == subj.id
    assert np.array_equal(back.mask, subj.mask)
    for a, b in zip(back.modalities, subj.modalities):
        assert np.array_equal(a, b)


def test_subject_io_missing_pieces(tmp_path):
    with pytest.raises(DataError):
        load_subject(tmp_path, "nope")
    os.makedirs(tmp_path / "incomplete")
    with pytest.raises(DataError):
        load_subject(tmp_path, "incomplete")
    with pytest.raises(DataError):
        list_subjects(tmp_path / "absent")
    # directory without a seg volume is ignored; nothing found -> error
    with pytest.raises(DataError):
        list_subjects(tmp_path)


def test_subject_shape_consistency_enforced():
    with pytest.raises(DataError):
        Subject(id="bad",
                modalities=[np.zeros((4, 4, 4), dtype=np.float32)] * 3
                + [np.zeros((4, 4, 5), dtype=np.float32)],
                mask=np.zeros((4, 4, 4), dtype=np.uint8))
