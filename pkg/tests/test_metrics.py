import numpy as np
import pytest

from fieldrefine import DisplacementField, InputError, LabelMap, dice, evaluate, hd95, make_smooth_field, sdlogj
from fieldrefine import make_translation_field

from oracles import dice_oracle, hd95_oracle, random_labels, sdlogj_oracle


class TestDice:
    def test_identical_and_disjoint(self):
        a = np.zeros((4, 4, 4), dtype=int)
        a[:2] = 1
        b = np.zeros_like(a)
        b[2:] = 1
        assert dice(LabelMap(a), LabelMap(a), 1) == 1.0
        assert dice(LabelMap(a), LabelMap(b), 1) == 0.0

    def test_shifted_cube(self):
        a = np.zeros((6, 6, 6), dtype=int)
        b = np.zeros_like(a)
        a[1:3, 1:3, 1:3] = 1
        b[2:4, 1:3, 1:3] = 1
        assert dice(LabelMap(a), LabelMap(b), 1) == 0.5

    def test_empty_conventions(self):
        z = LabelMap(np.zeros((3, 3, 3), dtype=int))
        one = LabelMap(np.ones((3, 3, 3), dtype=int))
        assert dice(z, z, 1) == 1.0
        assert dice(z, one, 1) == 0.0

    @pytest.mark.parametrize("seed", range(4))
    def test_oracle_and_symmetry(self, seed):
        a, b = random_labels(seed), random_labels(seed + 100)
        for lab in range(3):
            got = dice(a, b, lab)
            assert abs(got - dice_oracle(a.data, b.data, lab)) <= 1e-9
            assert got == dice(b, a, lab)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            dice(LabelMap(np.zeros((3, 3, 3), dtype=int)), LabelMap(np.zeros((3, 3, 4), dtype=int)), 1)


class TestHd95:
    def test_identical(self):
        a = random_labels(0)
        assert hd95(a, a, 1) == 0.0

    def test_two_voxels_anisotropic(self):
        a = np.zeros((8, 4, 4), dtype=int)
        b = np.zeros_like(a)
        a[1, 2, 2] = 1
        b[4, 2, 2] = 1
        assert hd95(LabelMap(a), LabelMap(b), 1, (2.0, 1.0, 1.0)) == 6.0

    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force_oracle(self, seed):
        a, b = random_labels(seed), random_labels(seed + 200)
        spacing = np.array([1.0, 1.5, 0.8]) if seed % 2 else np.ones(3)
        for lab in (1, 2):
            got = hd95(a, b, lab, tuple(spacing))
            assert abs(got - hd95_oracle(a.data == lab, b.data == lab, spacing)) <= 1e-9
            assert got == hd95(b, a, lab, tuple(spacing))

    def test_empty_label(self):
        a = LabelMap(np.zeros((4, 4, 4), dtype=int))
        b = LabelMap(np.ones((4, 4, 4), dtype=int))
        with pytest.raises(InputError, match="undefined HD95"):
            hd95(a, b, 1)

    def test_default_spacing_from_map(self):
        a = np.zeros((8, 4, 4), dtype=int)
        b = np.zeros_like(a)
        a[1, 2, 2] = 1
        b[4, 2, 2] = 1
        assert hd95(LabelMap(a, (2.0, 1.0, 1.0)), LabelMap(b, (2.0, 1.0, 1.0)), 1) == 6.0


class TestSdlogj:
    def test_zero_field(self):
        assert sdlogj(DisplacementField.zeros((6, 6, 6))) == (0.0, 0.0)

    def test_uniform_scaling_interior(self):
        grid = np.stack(np.meshgrid(*[np.arange(8.0)] * 3, indexing="ij"), axis=-1)
        sd, folded = sdlogj(DisplacementField(0.1 * grid), interior_only=True)
        assert sd <= 1e-6 and folded == 0.0

    @pytest.mark.parametrize("seed", range(2))
    def test_naive_oracle(self, seed):
        f = make_smooth_field((12, 12, 12), 2.0, 3.0, seed=seed)
        sd, folded = sdlogj(f)
        osd, ofold = sdlogj_oracle(f.data)
        assert abs(sd - osd) <= 1e-10 and folded == ofold

    def test_naive_oracle_16(self):
        f = make_smooth_field((16, 16, 16), 2.0, 4.0, seed=5)
        assert abs(sdlogj(f)[0] - sdlogj_oracle(f.data)[0]) <= 1e-10

    def test_folded_voxels_counted(self):
        rng = np.random.default_rng(3)
        f = DisplacementField(rng.normal(0, 1.5, (6, 6, 6, 3)))
        sd, folded = sdlogj(f)
        osd, ofold = sdlogj_oracle(f.data)
        assert folded > 0 and folded == ofold
        assert abs(sd - osd) <= 1e-9

    def test_translation_invariance(self):
        f = make_smooth_field((10, 10, 10), 1.5, 3.0, seed=2)
        moved = DisplacementField(f.data + make_translation_field(f.dims, (3.0, -1.0, 0.5)).data)
        assert sdlogj(moved)[0] == pytest.approx(sdlogj(f)[0], abs=1e-12)

    def test_all_folded(self):
        grid = np.stack(np.meshgrid(*[np.arange(5.0)] * 3, indexing="ij"), axis=-1)
        with pytest.raises(InputError):
            sdlogj(DisplacementField(-2.0 * grid))


class TestEvaluate:
    def test_identity(self):
        lab = random_labels(1)
        rep = evaluate(lab, lab, DisplacementField.zeros(lab.dims))
        assert rep.dice_mean == 1.0
        assert all(v == 0.0 for v in rep.hd95_per_label.values())
        assert rep.sdlogj == 0.0 and rep.folded_fraction == 0.0
        assert sorted(rep.dice_per_label) == [1, 2]

    def test_integer_shift_cube(self):
        a = np.zeros((6, 6, 6), dtype=int)
        a[1:3, 1:3, 1:3] = 1
        # pulling from x + 1 moves the moving cube one voxel lower, overlapping half of it
        rep = evaluate(LabelMap(a), LabelMap(a), make_translation_field((6, 6, 6), (1.0, 0.0, 0.0)))
        assert rep.dice_per_label[1] == 0.5

    def test_no_common_labels(self):
        a = LabelMap(np.ones((4, 4, 4), dtype=int))
        b = LabelMap(np.full((4, 4, 4), 2))
        with pytest.raises(InputError, match="no common labels"):
            evaluate(a, b, DisplacementField.zeros((4, 4, 4)))

    def test_vanished_label_gives_none(self):
        a = np.zeros((6, 6, 6), dtype=int)
        a[0, 0, 0] = 1
        a[3:, 3:, 3:] = 2
        rep = evaluate(LabelMap(a), LabelMap(a), make_translation_field((6, 6, 6), (2.0, 2.0, 2.0)))
        assert rep.hd95_per_label[1] is None
        assert rep.dice_per_label[1] == 0.0

    def test_as_dict_keys(self):
        lab = random_labels(2)
        d = evaluate(lab, lab, DisplacementField.zeros(lab.dims)).as_dict()
        assert set(d) == {"dice_per_label", "dice_mean", "hd95_per_label", "sdlogj", "folded_fraction"}
        assert set(d["dice_per_label"]) == {"1", "2"}
