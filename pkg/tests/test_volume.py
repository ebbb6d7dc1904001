import json

import numpy as np
import pytest

from curvereg.errors import (
    GridMismatch,
    HeaderParse,
    IndexOutOfRange,
    IoFailure,
    MissingChannel,
    MissingFile,
    SizeMismatch,
)
from curvereg.volume import (
    CHANNEL_CT,
    CHANNEL_PET,
    CHANNEL_PET_PREPROCESSED,
    Geometry,
    VoxelGrid,
    extract_slice,
    load_nrrd,
    load_volume,
    make_grid,
    preprocess_pet,
    residual_image,
    resample,
    sample_channel,
    save_volume,
    trilinear_sample,
)


def grid_from(values, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), channel=CHANNEL_CT):
    values = np.asarray(values, dtype=np.float32)
    nz, ny, nx = values.shape
    return make_grid((nx, ny, nz), spacing, origin, [channel], [values])


def random_grid(seed, dims=(5, 4, 6), channels=(CHANNEL_CT, CHANNEL_PET)):
    rng = np.random.default_rng(seed)
    nx, ny, nz = dims
    arrays = [rng.normal(size=(nz, ny, nx)).astype(np.float32) for _ in channels]
    return make_grid(dims, (2.0, 1.5, 3.0), (-4.0, 2.0, 1.0), channels, arrays)


class TestVoxelGrid:
    def test_dims_spacing_validation(self):
        with pytest.raises(Exception):
            Geometry((1, 4, 4), (1, 1, 1), (0, 0, 0))
        with pytest.raises(Exception):
            Geometry((4, 4, 4), (1, 0, 1), (0, 0, 0))

    def test_data_length_must_match_dims(self):
        with pytest.raises(SizeMismatch):
            make_grid((4, 4, 4), (1, 1, 1), (0, 0, 0), [CHANNEL_CT], [np.zeros(63, np.float32)])

    def test_world_voxel_round_trip(self):
        g = random_grid(0)
        rng = np.random.default_rng(1)
        v = rng.uniform(0, np.array(g.dims) - 1, size=(200, 3))
        back = g.world_to_voxel(g.voxel_to_world(v))
        assert np.abs(back - v).max() < 1e-6

    def test_immutability(self):
        g = random_grid(0)
        with pytest.raises(ValueError):
            g.channel_data(CHANNEL_CT)[0, 0, 0] = 1.0


class TestVolumeIO:
    def test_constant_field_round_trip(self, tmp_path):
        g = make_grid((4, 4, 4), (1, 1, 1), (0, 0, 0), [CHANNEL_CT], [np.ones(64, np.float32)])
        save_volume(g, tmp_path / "c.vmeta")
        loaded = load_volume(tmp_path / "c.vmeta")
        assert float(trilinear_sample(loaded, CHANNEL_CT, (1.7, 2.1, 0.9))) == 1.0

    def test_payload_size_mismatch(self, tmp_path):
        g = make_grid((4, 4, 4), (1, 1, 1), (0, 0, 0), [CHANNEL_CT], [np.ones(64, np.float32)])
        save_volume(g, tmp_path / "c.vmeta")
        raw = tmp_path / "c.ct.raw"
        raw.write_bytes(raw.read_bytes()[:-4])  # drop one float
        with pytest.raises(SizeMismatch):
            load_volume(tmp_path / "c.vmeta")

    def test_round_trip_bit_identical(self, tmp_path):
        g = random_grid(7)
        save_volume(g, tmp_path / "r.vmeta")
        loaded = load_volume(tmp_path / "r.vmeta")
        assert loaded.dims == g.dims
        assert loaded.spacing == g.spacing
        assert loaded.origin == g.origin
        assert loaded.channels == g.channels
        for c in g.channels:
            assert loaded.channel_data(c).tobytes() == g.channel_data(c).tobytes()

    def test_two_channels_two_payloads_one_header(self, tmp_path):
        g = random_grid(3)
        save_volume(g, tmp_path / "two.vmeta")
        assert (tmp_path / "two.vmeta").exists()
        raws = sorted(p.name for p in tmp_path.glob("*.raw"))
        assert raws == ["two.ct.raw", "two.pet.raw"]

    def test_save_to_unwritable_path_raises(self, tmp_path):
        blocker = tmp_path / "not-a-dir"
        blocker.write_text("plain file", encoding="utf-8")
        with pytest.raises(IoFailure):
            save_volume(random_grid(0), blocker / "x.vmeta")

    def test_missing_header(self, tmp_path):
        with pytest.raises(MissingFile):
            load_volume(tmp_path / "nothing.vmeta")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "bad.vmeta").write_text("{not json", encoding="utf-8")
        with pytest.raises(HeaderParse):
            load_volume(tmp_path / "bad.vmeta")
        (tmp_path / "bad2.vmeta").write_text(json.dumps({"dims": [4, 4, 4]}), encoding="utf-8")
        with pytest.raises(HeaderParse):
            load_volume(tmp_path / "bad2.vmeta")


class TestNrrdImport:
    def write_nrrd(self, tmp_path, *, dtype="float", endian="little", dim="3",
                   encoding="raw", sizes="3 4 5", payload=None):
        header = "\n".join(
            [
                "NRRD0004",
                f"type: {dtype}",
                f"dimension: {dim}",
                f"sizes: {sizes}",
                "spacings: 2.0 2.0 3.0",
                f"endian: {endian}",
                f"encoding: {encoding}",
                "data file: vol.raw",
            ]
        )
        (tmp_path / "vol.nhdr").write_text(header, encoding="utf-8")
        if payload is None:
            payload = np.arange(60, dtype="<f4").tobytes()
        (tmp_path / "vol.raw").write_bytes(payload)
        return tmp_path / "vol.nhdr"

    def test_minimal_profile_accepted(self, tmp_path):
        path = self.write_nrrd(tmp_path)
        g = load_nrrd(path)
        assert g.dims == (3, 4, 5)
        assert g.spacing == (2.0, 2.0, 3.0)
        # NRRD space origin defaults to voxel-0 center at 0 => corner at -spacing/2
        assert g.origin == (-1.0, -1.0, -1.5)
        assert g.channel_data(CHANNEL_CT).reshape(-1)[7] == 7.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"dtype": "double"},
            {"dtype": "short"},
            {"endian": "big"},
            {"dim": "4"},
            {"encoding": "gzip"},
        ],
    )
    def test_unsupported_profiles_rejected(self, tmp_path, kwargs):
        path = self.write_nrrd(tmp_path, **kwargs)
        with pytest.raises(HeaderParse):
            load_nrrd(path)


class TestPreprocessPet:
    def test_constant_field_gives_zero_gradient(self):
        pet = np.full((4, 4, 4), 7.5, np.float32)
        g = make_grid((4, 4, 4), (1, 1, 1), (0, 0, 0), [CHANNEL_PET], [pet])
        out = preprocess_pet(g)
        assert np.all(out.channel_data(CHANNEL_PET_PREPROCESSED) == 0.0)

    def test_exponential_ramp_gradient_is_one(self):
        # exp(x_mm) on a short span (clamp never engages); grad log = 1/mm.
        nx, ny, nz = 9, 8, 8
        spacing = (0.5, 0.5, 0.5)
        xs = (np.arange(nx) + 0.5) * spacing[0]
        pet = np.tile(np.exp(xs)[None, None, :], (nz, ny, 1)).astype(np.float32)
        g = make_grid((nx, ny, nz), spacing, (0, 0, 0), [CHANNEL_PET], [pet])
        out = preprocess_pet(g).channel_data(CHANNEL_PET_PREPROCESSED)
        interior = out[1:-1, 1:-1, 1:-1]
        assert np.abs(interior - 1.0).max() < 1e-4

    def test_zeros_stay_finite(self):
        rng = np.random.default_rng(0)
        pet = rng.uniform(0, 10, (5, 5, 5)).astype(np.float32)
        pet[0, 0, 0] = 0.0
        pet[2, 3, 1] = 0.0
        g = make_grid((5, 5, 5), (1, 1, 1), (0, 0, 0), [CHANNEL_PET], [pet])
        out = preprocess_pet(g)
        assert np.all(np.isfinite(out.channel_data(CHANNEL_PET_PREPROCESSED)))

    @pytest.mark.parametrize("k", [0.1, 10.0, 1000.0])
    def test_invariant_to_global_scaling(self, k):
        rng = np.random.default_rng(42)
        pet = rng.uniform(0, 20, (6, 5, 7)).astype(np.float32)
        pet[rng.uniform(size=pet.shape) < 0.2] = 0.0
        dims = (7, 5, 6)
        a = preprocess_pet(make_grid(dims, (2, 2, 2), (0, 0, 0), [CHANNEL_PET], [pet]))
        b = preprocess_pet(make_grid(dims, (2, 2, 2), (0, 0, 0), [CHANNEL_PET], [pet * k]))
        diff = np.abs(
            a.channel_data(CHANNEL_PET_PREPROCESSED) - b.channel_data(CHANNEL_PET_PREPROCESSED)
        )
        assert diff.max() < 1e-5

    def test_missing_pet_channel(self):
        g = random_grid(0, channels=(CHANNEL_CT,))
        with pytest.raises(MissingChannel):
            preprocess_pet(g)


class TestTrilinearSample:
    def test_voxel_center_returns_stored_value(self):
        g = random_grid(5)
        data = g.channel_data(CHANNEL_CT)
        for (vx, vy, vz) in [(0, 0, 0), (2, 1, 3), (4, 3, 5)]:
            p = g.voxel_to_world((vx, vy, vz))
            assert trilinear_sample(g, CHANNEL_CT, p) == data[vz, vy, vx]

    def test_midpoint_linearity(self):
        values = np.zeros((2, 2, 2), np.float32)
        values[:, :, 0] = 2.0
        values[:, :, 1] = 4.0
        g = grid_from(values)
        p = g.voxel_to_world((0.5, 0.0, 0.0))
        assert trilinear_sample(g, CHANNEL_CT, p) == pytest.approx(3.0, abs=1e-12)

    def test_out_of_bounds_uses_fill(self):
        g = random_grid(2, channels=(CHANNEL_CT,))
        assert trilinear_sample(g, CHANNEL_CT, (1e4, 1e4, 1e4)) == -1000.0
        assert trilinear_sample(g, CHANNEL_CT, (1e4, 1e4, 1e4), fill=5.0) == 5.0

    def test_exact_on_affine_fields_inside_hull(self):
        # f(p) = a.p + b reproduced exactly by trilinear interpolation.
        a = np.array([0.3, -0.7, 0.15])
        b = 2.0
        dims = (6, 5, 7)
        geom = Geometry(dims, (2.0, 1.0, 1.5), (-3.0, 1.0, 0.5))
        centers = geom.voxel_centers()
        field = (centers @ a + b).astype(np.float32)
        g = make_grid(dims, geom.spacing, geom.origin, [CHANNEL_CT], [field])
        rng = np.random.default_rng(3)
        lo = geom.voxel_to_world((0, 0, 0))
        hi = geom.voxel_to_world(np.array(dims) - 1.0)
        pts = rng.uniform(lo, hi, size=(500, 3))
        got = sample_channel(g, CHANNEL_CT, pts)
        want = pts @ a + b
        assert np.all(np.abs(got - want) <= 1e-4 * (1.0 + np.abs(want)))


class TestExtractSlice:
    def test_constant_grid_constant_slice(self):
        g = grid_from(np.full((3, 4, 5), 2.5, np.float32))
        sl = extract_slice(g, CHANNEL_CT, 1)
        assert np.all(sl.values == 2.5)
        assert (sl.width, sl.height) == (5, 4)

    def test_index_out_of_range(self):
        g = random_grid(0)
        with pytest.raises(IndexOutOfRange):
            extract_slice(g, CHANNEL_CT, g.dims[2])

    def test_matches_direct_indexing_oracle(self):
        g = random_grid(11)
        data = g.channel_data(CHANNEL_PET)
        for z in range(g.dims[2]):
            sl = extract_slice(g, CHANNEL_PET, z, window=(0.0, 1.0))
            assert np.array_equal(sl.values, data[z])
            assert sl.window == (0.0, 1.0)


class TestResidualImage:
    def test_self_difference_is_zero(self):
        g = random_grid(0)
        r = residual_image(g, g, CHANNEL_CT)
        assert np.all(r.channel_data(CHANNEL_CT) == 0.0)

    def test_dims_mismatch(self):
        a = random_grid(0, dims=(5, 4, 6))
        b = random_grid(0, dims=(6, 4, 6))
        with pytest.raises(GridMismatch):
            residual_image(a, b, CHANNEL_CT)

    def test_index_shift_oracle(self):
        g = random_grid(9, channels=(CHANNEL_CT,))
        data = g.channel_data(CHANNEL_CT)
        shifted = np.roll(data, 1, axis=2)  # shift along x
        h = make_grid(g.dims, g.spacing, g.origin, [CHANNEL_CT], [shifted])
        r = residual_image(g, h, CHANNEL_CT).channel_data(CHANNEL_CT)
        want = data - shifted
        assert np.array_equal(r, want.astype(np.float32))


def test_resample_identity_geometry_preserves_values():
    g = random_grid(4)
    r = resample(g, g.geometry)
    for c in g.channels:
        assert np.array_equal(r.channel_data(c), g.channel_data(c))
