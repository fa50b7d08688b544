"""Array formats, manifests, splits, preprocessing, and phantoms.

Oracles:
- NPY: numpy's own np.save / np.load on the same arrays (byte-identical
  output, interchangeable input)
- TIFF: hand-assembled little- and big-endian fixtures with known pixels
- splits: hand-worked largest-remainder examples
- preprocessing: closed-form recomputation on tiny arrays
"""

from __future__ import annotations

import io
import struct

import numpy as np
import pytest

from stackdenoise.dataio.manifest import (
    ManifestError,
    StackManifest,
    load_manifests,
    load_stack,
    make_splits,
    save_manifests,
    save_stack,
)
from stackdenoise.dataio.npyio import (
    NpyFormatError,
    array_from_bytes,
    array_to_bytes,
    read_array,
    write_array,
)
from stackdenoise.dataio.phantom import (
    PhantomSpec,
    generate_phantom_stack,
    with_plane_noise,
)
from stackdenoise.dataio.preprocess import (
    DegenerateImageError,
    preprocess_microscopy,
    preprocess_mri,
    scale_plane_unit_interval,
)
from stackdenoise.dataio.tiffio import TiffFormatError, read_tiff_gray, write_tiff_gray
from stackdenoise.stack import ImageStack


# --- NPY ------------------------------------------------------------------------


def test_npy_bytes_identical_to_numpy(rng):
    for shape, dt in [((3, 4), "<f8"), ((7,), "<f4"), ((2, 3, 4), "<f8"), ((1, 2, 3, 4), "<f4")]:
        arr = rng.standard_normal(shape).astype(dt)
        buf = io.BytesIO()
        np.save(buf, arr)
        assert array_to_bytes(arr) == buf.getvalue()


def test_npy_round_trip_bit_exact(rng, tmp_path):
    for i in range(50):
        shape = tuple(rng.integers(1, 6, size=int(rng.integers(1, 5))))
        dt = np.float32 if i % 2 else np.float64
        arr = rng.standard_normal(shape).astype(dt)
        path = tmp_path / f"a{i}.npy"
        write_array(path, arr)
        back = read_array(path)
        assert back.dtype == arr.dtype
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr)


def test_npy_reads_numpy_written_files(rng, tmp_path):
    arr = rng.standard_normal((5, 6)).astype(np.float32)
    np.save(tmp_path / "ref.npy", arr)
    np.testing.assert_array_equal(read_array(tmp_path / "ref.npy"), arr)


def test_npy_numpy_reads_our_files(rng, tmp_path):
    arr = rng.standard_normal((4, 4))
    write_array(tmp_path / "ours.npy", arr)
    np.testing.assert_array_equal(np.load(tmp_path / "ours.npy"), arr)


def _valid_blob(rng):
    return array_to_bytes(rng.standard_normal((3, 3)))


def test_npy_rejects_bad_magic(rng):
    blob = b"NOTNPY" + _valid_blob(rng)[6:]
    with pytest.raises(NpyFormatError, match="magic"):
        array_from_bytes(blob)


def test_npy_rejects_other_versions(rng):
    blob = bytearray(_valid_blob(rng))
    blob[6:8] = bytes([2, 0])
    with pytest.raises(NpyFormatError, match="version"):
        array_from_bytes(bytes(blob))


def test_npy_rejects_unsupported_dtypes(rng, tmp_path):
    np.save(tmp_path / "i.npy", np.arange(4, dtype=np.int32))
    with pytest.raises(NpyFormatError, match="descr|dtype"):
        read_array(tmp_path / "i.npy")
    np.save(tmp_path / "be.npy", np.zeros(3, dtype=">f8"))
    with pytest.raises(NpyFormatError):
        read_array(tmp_path / "be.npy")


def test_npy_rejects_fortran_order(rng, tmp_path):
    arr = np.asfortranarray(rng.standard_normal((4, 5)))
    np.save(tmp_path / "f.npy", arr)
    with pytest.raises(NpyFormatError, match="fortran"):
        read_array(tmp_path / "f.npy")


def test_npy_rejects_bad_ndim(rng):
    with pytest.raises(NpyFormatError, match="dimension"):
        array_from_bytes(array_to_bytes_raw_0d())
    arr5 = np.zeros((1, 1, 1, 1, 1))
    with pytest.raises(ValueError):
        array_to_bytes(arr5)


def array_to_bytes_raw_0d():
    buf = io.BytesIO()
    np.save(buf, np.float64(3.0))
    return buf.getvalue()


def test_npy_rejects_truncated_payload(rng):
    blob = _valid_blob(rng)
    with pytest.raises(NpyFormatError, match="payload|length"):
        array_from_bytes(blob[:-8])
    with pytest.raises(NpyFormatError, match="payload|length"):
        array_from_bytes(blob + b"\0" * 4)


def test_npy_rejects_header_junk(rng):
    blob = bytearray(_valid_blob(rng))
    blob[12] = ord("!")  # corrupt the header dict text
    with pytest.raises(NpyFormatError):
        array_from_bytes(bytes(blob))


def test_npy_write_rejects_non_float(tmp_path):
    with pytest.raises(ValueError):
        write_array(tmp_path / "x.npy", np.arange(4))


# --- TIFF ------------------------------------------------------------------------


def build_tiff(data: np.ndarray, endian: str, bits: int) -> bytes:
    """Hand-assemble a minimal single-strip grayscale TIFF."""
    e = "<" if endian == "little" else ">"
    h, w = data.shape
    strip = data.astype(f"{e}u{bits // 8}").tobytes()
    # header (8) + IFD: count (2) + 9 entries (12 each) + next-IFD (4)
    ifd_offset = 8
    strip_offset = ifd_offset + 2 + 9 * 12 + 4

    def entry(tag, typ, count, value):
        return struct.pack(f"{e}HHI", tag, typ, count) + struct.pack(f"{e}I", value)

    entries = [
        entry(256, 3, 1, w),            # ImageWidth
        entry(257, 3, 1, h),            # ImageLength
        entry(258, 3, 1, bits),         # BitsPerSample
        entry(259, 3, 1, 1),            # Compression: none
        entry(262, 3, 1, 1),            # Photometric: BlackIsZero
        entry(273, 4, 1, strip_offset), # StripOffsets
        entry(277, 3, 1, 1),            # SamplesPerPixel
        entry(278, 3, 1, h),            # RowsPerStrip
        entry(279, 4, 1, len(strip)),   # StripByteCounts
    ]
    # SHORT values sit left-justified in the 4-byte value slot on big-endian
    if endian == "big":
        fixed = []
        for raw in entries:
            tag, typ, count = struct.unpack(f"{e}HHI", raw[:8])
            if typ == 3:
                val = struct.unpack(f"{e}I", raw[8:])[0]
                fixed.append(raw[:8] + struct.pack(f"{e}HH", val, 0))
            else:
                fixed.append(raw)
        entries = fixed
    magic = b"II" if endian == "little" else b"MM"
    head = magic + struct.pack(f"{e}H", 42) + struct.pack(f"{e}I", ifd_offset)
    ifd = struct.pack(f"{e}H", len(entries)) + b"".join(entries) + struct.pack(f"{e}I", 0)
    return head + ifd + strip


@pytest.fixture
def gradient_u16():
    return (np.arange(12, dtype=np.uint16).reshape(3, 4) * 1000 + 17).astype(np.uint16)


def test_tiff_little_and_big_endian_decode_identically(gradient_u16, tmp_path):
    le = tmp_path / "le.tif"
    be = tmp_path / "be.tif"
    le.write_bytes(build_tiff(gradient_u16, "little", 16))
    be.write_bytes(build_tiff(gradient_u16, "big", 16))
    a = read_tiff_gray(le)
    b = read_tiff_gray(be)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, gradient_u16.astype(np.float64))
    assert a.dtype == np.float64


def test_tiff_8bit_fixture(tmp_path):
    data = np.arange(20, dtype=np.uint8).reshape(4, 5)
    for endian in ("little", "big"):
        p = tmp_path / f"{endian}.tif"
        p.write_bytes(build_tiff(data, endian, 8))
        np.testing.assert_array_equal(read_tiff_gray(p), data.astype(np.float64))


def test_tiff_write_read_round_trip(rng, tmp_path):
    for bits, hi in ((8, 255), (16, 65535)):
        data = rng.integers(0, hi + 1, size=(6, 9)).astype(np.float64)
        p = tmp_path / f"rt{bits}.tif"
        write_tiff_gray(p, data, bits=bits)
        np.testing.assert_array_equal(read_tiff_gray(p), data)


def test_tiff_write_validates_range(tmp_path):
    with pytest.raises(ValueError):
        write_tiff_gray(tmp_path / "x.tif", np.array([[-1.0, 0.0]]), bits=8)
    with pytest.raises(ValueError):
        write_tiff_gray(tmp_path / "x.tif", np.array([[0.0, 256.0]]), bits=8)
    with pytest.raises(ValueError):
        write_tiff_gray(tmp_path / "x.tif", np.array([[0.5, 1.0]]), bits=8)  # non-integer


def test_tiff_rejects_compression(gradient_u16, tmp_path):
    blob = bytearray(build_tiff(gradient_u16, "little", 16))
    # entry 4 (Compression) value lives at 8 + 2 + 3*12 + 8
    off = 8 + 2 + 3 * 12 + 8
    struct.pack_into("<I", blob, off, 5)  # LZW
    p = tmp_path / "c.tif"
    p.write_bytes(bytes(blob))
    with pytest.raises(TiffFormatError, match="compress"):
        read_tiff_gray(p)


def test_tiff_rejects_tiles(gradient_u16, tmp_path):
    blob = bytearray(build_tiff(gradient_u16, "little", 16))
    # overwrite the RowsPerStrip entry's tag (278) with TileWidth (322)
    off = 8 + 2 + 7 * 12
    struct.pack_into("<H", blob, off, 322)
    p = tmp_path / "t.tif"
    p.write_bytes(bytes(blob))
    with pytest.raises(TiffFormatError, match="322|tile"):
        read_tiff_gray(p)


def test_tiff_rejects_missing_required_tag(gradient_u16, tmp_path):
    blob = bytearray(build_tiff(gradient_u16, "little", 16))
    # blank out ImageWidth's tag id so the required set is incomplete
    struct.pack_into("<H", blob, 10, 999)
    p = tmp_path / "m.tif"
    p.write_bytes(bytes(blob))
    with pytest.raises(TiffFormatError, match="256|width|required"):
        read_tiff_gray(p)


def test_tiff_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.tif"
    p.write_bytes(b"PK\x03\x04" + b"\0" * 64)
    with pytest.raises(TiffFormatError):
        read_tiff_gray(p)


def test_tiff_rejects_strip_overrun(gradient_u16, tmp_path):
    blob = bytearray(build_tiff(gradient_u16, "little", 16))
    # StripByteCounts (entry 9) value: claim more bytes than the file holds
    off = 8 + 2 + 8 * 12 + 8
    struct.pack_into("<I", blob, off, 10_000)
    p = tmp_path / "o.tif"
    p.write_bytes(bytes(blob))
    with pytest.raises(TiffFormatError):
        read_tiff_gray(p)


# --- manifests -----------------------------------------------------------------------


def _write_stack_files(rng, tmp_path, sid="s0", n=3, h=8, w=8, split="train"):
    stack = ImageStack(rng.standard_normal((n, h, w)), id=sid)
    man = save_stack(stack, tmp_path, modality="mri", split=split)
    return stack, man


def test_save_stack_layout(rng, tmp_path):
    stack, man = _write_stack_files(rng, tmp_path, sid="subj01")
    assert list(man.plane_files) == [f"subj01_p{i:04d}.npy" for i in range(3)]
    assert man.height == 8 and man.width == 8
    loaded = load_stack(man, tmp_path)
    np.testing.assert_array_equal(loaded.planes, stack.planes)
    assert loaded.id == "subj01"


def test_manifest_json_round_trip(rng, tmp_path):
    _, m1 = _write_stack_files(rng, tmp_path, sid="a")
    _, m2 = _write_stack_files(rng, tmp_path, sid="b", split="test")
    path = tmp_path / "manifest.json"
    save_manifests(path, [m1, m2])
    back = load_manifests(path)
    assert back == [m1, m2]


def test_manifest_rejects_duplicates(rng, tmp_path):
    _, m = _write_stack_files(rng, tmp_path)
    path = tmp_path / "manifest.json"
    with pytest.raises(ManifestError, match="duplicate"):
        save_manifests(path, [m, m])


def test_manifest_validates_fields():
    with pytest.raises(ManifestError):
        StackManifest("x", "ct", ["p.npy"], "train", 4, 4)
    with pytest.raises(ManifestError):
        StackManifest("x", "mri", ["p.npy"], "holdout", 4, 4)
    with pytest.raises(ManifestError):
        StackManifest("x", "mri", [], "train", 4, 4)


def test_load_stack_catches_shape_drift(rng, tmp_path):
    _, man = _write_stack_files(rng, tmp_path)
    write_array(tmp_path / man.plane_files[1], rng.standard_normal((4, 4)))
    with pytest.raises(ManifestError, match="shape"):
        load_stack(man, tmp_path)


def test_load_stack_missing_file(rng, tmp_path):
    _, man = _write_stack_files(rng, tmp_path)
    (tmp_path / man.plane_files[0]).unlink()
    with pytest.raises(ManifestError, match="missing|not found"):
        load_stack(man, tmp_path)


# --- splits --------------------------------------------------------------------------


def _manifests(n, modality="mri"):
    return [
        StackManifest(f"s{i:03d}", modality, ["p0.npy"], "train", 8, 8)
        for i in range(n)
    ]


def test_make_splits_mri_60():
    splits = make_splits(_manifests(60), "mri")
    assert [len(splits[k]) for k in ("train", "val", "test")] == [48, 2, 10]


def test_make_splits_mri_8():
    splits = make_splits(_manifests(8), "mri")
    assert [len(splits[k]) for k in ("train", "val", "test")] == [6, 1, 1]


def test_make_splits_mri_no_overlap_and_total():
    splits = make_splits(_manifests(23), "mri")
    ids = [m.id for k in ("train", "val", "test") for m in splits[k]]
    assert len(ids) == 23
    assert len(set(ids)) == 23
    for k in ("train", "val", "test"):
        assert all(m.split == k for m in splits[k])


def test_make_splits_microscopy_wells():
    # 18 fields in wells of 9: first well trains, last well -> 3 val + 6 test
    splits = make_splits(_manifests(18, "fluor_low"), "microscopy", fields_per_well=9)
    assert [len(splits[k]) for k in ("train", "val", "test")] == [9, 3, 6]
    # val/test come from the LAST well only
    last_well_ids = {f"s{i:03d}" for i in range(9, 18)}
    assert {m.id for m in splits["val"]} <= last_well_ids
    assert {m.id for m in splits["test"]} <= last_well_ids


def test_make_splits_validates():
    with pytest.raises(ManifestError):
        make_splits([], "mri")
    with pytest.raises(ManifestError):
        make_splits(_manifests(4), "pet")
    with pytest.raises(ManifestError):
        make_splits(_manifests(4, "fluor_low"), "microscopy", fields_per_well=9)


# --- preprocessing -------------------------------------------------------------------


def test_scale_plane_unit_interval(rng):
    p = rng.standard_normal((8, 8)) * 7 + 3
    out = scale_plane_unit_interval(p)
    assert out.min() == pytest.approx(-0.5, abs=1e-12)
    assert out.max() == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(DegenerateImageError):
        scale_plane_unit_interval(np.full((4, 4), 2.0))


def test_preprocess_mri_trims_and_scales(rng):
    stack = ImageStack(rng.standard_normal((150, 8, 8)) * 11, id="subj")
    out = preprocess_mri(stack)
    assert out.n_planes == 100
    # the kept range is the middle 100 planes
    np.testing.assert_allclose(
        out.planes[0], scale_plane_unit_interval(stack.planes[25]), atol=1e-12
    )
    for p in out.planes:
        assert p.min() == pytest.approx(-0.5, abs=1e-12)
        assert p.max() == pytest.approx(0.5, abs=1e-12)


def test_preprocess_mri_passes_short_stacks_through(rng):
    stack = ImageStack(rng.standard_normal((10, 8, 8)), id="short")
    assert preprocess_mri(stack).n_planes == 10


def test_preprocess_microscopy_formula(rng):
    stacks = [
        ImageStack(rng.random((3, 8, 8)) * 500 + 100, id=f"f{i}") for i in range(2)
    ]
    outs, background = preprocess_microscopy(stacks)
    all_planes = np.concatenate([s.planes for s in stacks])
    np.testing.assert_allclose(background, np.median(all_planes, axis=0), atol=1e-12)
    q = stacks[0].planes[0] - background
    p3, p998 = np.percentile(q, (3.0, 99.8))
    np.testing.assert_allclose(outs[0].planes[0], (q - p3) / (p998 - p3), atol=1e-12)


# --- phantoms -------------------------------------------------------------------------


def test_phantom_deterministic():
    a = generate_phantom_stack(PhantomSpec(seed=3), stack_id="p")
    b = generate_phantom_stack(PhantomSpec(seed=3), stack_id="p")
    np.testing.assert_array_equal(a.planes, b.planes)
    c = generate_phantom_stack(PhantomSpec(seed=4), stack_id="p")
    assert not np.array_equal(a.planes, c.planes)


def test_phantom_shape_and_range():
    spec = PhantomSpec(n_planes=5, height=32, width=24, seed=0)
    s = generate_phantom_stack(spec)
    assert s.planes.shape == (5, 32, 24)
    assert s.planes.min() == pytest.approx(-0.5, abs=1e-12)
    assert s.planes.max() == pytest.approx(0.5, abs=1e-12)


def test_phantom_zero_drift_means_identical_planes():
    s = generate_phantom_stack(PhantomSpec(drift_rate=0.0, seed=1))
    for p in s.planes[1:]:
        np.testing.assert_allclose(p, s.planes[0], atol=1e-12)


def test_phantom_drift_moves_planes_apart():
    s = generate_phantom_stack(PhantomSpec(drift_rate=0.05, seed=1))
    d1 = float(np.mean((s.planes[0] - s.planes[1]) ** 2))
    d8 = float(np.mean((s.planes[0] - s.planes[8]) ** 2))
    assert 0 < d1 < d8


def test_phantom_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(n_planes=0)
    with pytest.raises(ValueError):
        PhantomSpec(drift_rate=-0.1)
    with pytest.raises(ValueError):
        PhantomSpec(height=4)


def test_with_plane_noise(rng):
    s = generate_phantom_stack(PhantomSpec(seed=0))
    noisy = with_plane_noise(s, sigma=0.1, seed=5)
    assert noisy.planes.shape == s.planes.shape
    resid = noisy.planes - s.planes
    assert 0.08 < resid.std() < 0.12
    np.testing.assert_array_equal(
        with_plane_noise(s, 0.1, 5).planes, noisy.planes
    )
