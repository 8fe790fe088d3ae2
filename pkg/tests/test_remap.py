import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nestfield.fields import Field, LayoutError, Space, dof_count, total_mass
from nestfield.mesh import HorizontalMesh, VerticalGrid, build_nested_pair
from nestfield.remap import (
    DryDensityPair,
    Remapper,
    clip_end_levels,
    moist_column_mass,
    shift_density,
    shift_mixing_ratio,
    tie_boundary_levels,
    unshift_mixing_ratio,
)

from conftest import make_remapper, rand


def tiny(Nk=2, nx=2, r=2, L=2.0, z_top=None):
    pair = build_nested_pair(HorizontalMesh(nx, nx, L, L), VerticalGrid.uniform(Nk, z_top or float(Nk)), r)
    return Remapper(pair)


def column(mesh, values, space=Space.VTHETA):
    """Same vertical profile in every column."""
    return Field(space, mesh, np.tile(np.asarray(values, float), mesh.ncols))


def densities(remap, rng):
    return remap.density_pair_from_fine(rand(rng, Space.VRHO, remap.fine, 0.9, 1.1))


class TestScalar:
    def test_restrict_is_child_mean(self):
        R = tiny(Nk=1)
        f = Field(Space.VRHO, R.fine, [1.0, 2.0, 3.0, 4.0])
        assert R.restrict_scalar(f).values.tolist() == [2.5]

    def test_identify_copies(self, flat_remap, rng):
        c = rand(rng, Space.VTHETA, flat_remap.coarse)
        f = flat_remap.identify_scalar(c)
        assert f.grid[3, 5, 2] == c.grid[1, 2, 2]

    def test_reconstruction_rows_sum_to_one(self, any_remap):
        np.testing.assert_allclose(any_remap.weights.reconstruction.sum(axis=1), 1.0, atol=1e-14)

    def test_reconstruction_reproduces_linear(self):
        R = make_remapper(nx=16)
        xc, yc = R.coarse.horizontal.cell_centres()
        xf, yf = R.fine.horizontal.cell_centres()
        # linear inside a window that avoids the periodic seam
        c = Field(Space.VRHO, R.coarse, np.repeat((2.0 + 3e-4 * xc - 1e-4 * yc).ravel(), 3))
        rec = R.reconstruct_scalar(c).grid[:, :, 0]
        exact = 2.0 + 3e-4 * xf - 1e-4 * yf
        np.testing.assert_allclose(rec[2:-2, 2:-2], exact[2:-2, 2:-2], rtol=1e-13)

    def test_quadratic_error_ratio(self):
        def err(n):
            R = Remapper(build_nested_pair(HorizontalMesh(2 * n, 2 * n, 1.0, 1.0), VerticalGrid.uniform(1, 1.0), 2))
            f = lambda m: (np.cos(2 * np.pi * m.horizontal.cell_centres()[0])
                           * np.cos(2 * np.pi * m.horizontal.cell_centres()[1])).ravel()
            out = R.prolong_scalar(Field(Space.VRHO, R.coarse, f(R.coarse)))
            return np.abs(out.values - f(R.fine)).max()

        e = [err(n) for n in (16, 32, 64)]
        assert 3.8 < e[1] / e[2] < e[0] / e[1] < 4.8

    def test_reversible(self, any_remap, rng):
        x = rand(rng, Space.VTHETA, any_remap.coarse)
        np.testing.assert_allclose(any_remap.restrict_scalar(any_remap.prolong_scalar(x)).values, x.values,
                                   atol=1e-13)

    def test_constants(self, any_remap):
        c = Field.constant(Space.VRHO, any_remap.coarse, 7.0)
        np.testing.assert_allclose(any_remap.prolong_scalar(c).values, 7.0, rtol=1e-14)

    def test_wrong_mesh(self, flat_remap, rng):
        with pytest.raises(LayoutError):
            flat_remap.restrict_scalar(rand(rng, Space.VRHO, flat_remap.coarse))
        with pytest.raises(LayoutError):
            flat_remap.prolong_scalar(rand(rng, Space.VU, flat_remap.coarse))


class TestDensity:
    def test_restriction_matches_enumeration(self, rng):
        R = make_remapper(nx=4, orography="hills")
        rho = rand(rng, Space.VRHO, R.fine, 0.5, 1.5)
        out = R.restrict_density(rho)
        n, mf, mc = R.pair.nesting, R.fine, R.coarse
        for I in range(2):
            for J in range(2):
                for k in range(3):
                    mass = sum(rho.grid[i, j, kk] * mf.cell_volume[i, j, kk] for i, j, kk in n.cells_of(I, J, k))
                    assert out.grid[I, J, k] == pytest.approx(mass / mc.cell_volume[I, J, k], rel=1e-14)

    @pytest.mark.parametrize("space", [Space.VRHO, Space.VRHO_SHIFTED])
    def test_mass_per_coarse_cell(self, any_remap, rng, space):
        rho = rand(rng, Space.VRHO, any_remap.coarse, 0.5, 1.5)
        if space is Space.VRHO_SHIFTED:
            rho = shift_density(rho)
        fine = any_remap.prolong_density(rho) if space is Space.VRHO else any_remap.identify_density(rho)
        vf = fine.grid * (any_remap.fine.cell_volume if space is Space.VRHO else any_remap.fine.shifted.cell_volume)
        vc = rho.grid * (any_remap.coarse.cell_volume if space is Space.VRHO
                         else any_remap.coarse.shifted.cell_volume)
        np.testing.assert_allclose(vf.reshape(4, 2, 4, 2, -1).sum(axis=(1, 3)), vc, rtol=1e-13)

    def test_identification_inverse(self, any_remap, rng):
        rho = rand(rng, Space.VRHO, any_remap.coarse, 0.5, 1.5)
        back = any_remap.restrict_density(any_remap.identify_density(rho))
        np.testing.assert_allclose(back.values, rho.values, rtol=1e-14)

    def test_bump_keeps_mass_not_constants(self, bump_remap):
        one = Field.constant(Space.VRHO, bump_remap.coarse, 1.0)
        out = bump_remap.prolong_density(one)
        assert total_mass(out) == pytest.approx(total_mass(one), rel=1e-14)
        assert np.abs(out.values - 1.0).max() > 1e-3

    def test_flat_constants(self, flat_remap):
        out = flat_remap.prolong_density(Field.constant(Space.VRHO, flat_remap.coarse, 1.0))
        np.testing.assert_allclose(out.values, 1.0, atol=1e-14)


class TestWind:
    def test_restrict_area_mean(self):
        R = tiny(Nk=1)
        x = np.zeros((2, 2, 1))
        x[1, :, 0] = [1.0, 3.0]
        u = Field.from_faces(R.fine, x, 0.0, 0.0)
        assert R.restrict_wind(u).faces()["x"][0, 0, 0] == pytest.approx(2.0)

    def test_interior_face_interpolated(self):
        R = tiny(Nk=1, nx=4, L=4.0)
        u = Field.from_faces(R.coarse, np.array([0.0, 4.0]).reshape(2, 1, 1) * np.ones((2, 2, 1)), 0.0, 0.0)
        x = R.prolong_wind(u).faces()["x"]
        assert x[0, 0, 0] == pytest.approx(2.0)  # midway between west (4) and east (0)
        assert x[1, 0, 0] == pytest.approx(0.0)
        assert x[3, 0, 0] == pytest.approx(4.0)

    def test_reversible(self, any_remap, rng):
        u = rand(rng, Space.VU, any_remap.coarse)
        np.testing.assert_allclose(any_remap.restrict_wind(any_remap.prolong_wind(u)).values, u.values, atol=1e-13)


class TestShift:
    def test_q_preserves_column_mass(self, rng):
        mesh = make_remapper(orography="hills").fine
        rho = rand(rng, Space.VRHO, mesh, 0.5, 1.5)
        q = shift_density(rho)
        np.testing.assert_allclose((q.grid * mesh.shifted.cell_volume).sum(axis=2),
                                   (rho.grid * mesh.cell_volume).sum(axis=2), rtol=1e-14)

    def test_m_hand_values(self):
        R = tiny(Nk=3)
        out = shift_mixing_ratio(column(R.fine, [0.0, 1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out.columns[0], [0.5, 1.0, 2.0, 2.5])

    def test_unshift_inverts(self, rng):
        mesh = make_remapper().fine
        m = rand(rng, Space.VTHETA, mesh)
        np.testing.assert_allclose(unshift_mixing_ratio(shift_mixing_ratio(m), clip=False).values, m.values,
                                   atol=1e-15)

    def test_unshift_clips_end_levels(self):
        R = tiny(Nk=3)
        mt = column(R.fine, [0.0, 1.0, 2.0, 3.0], Space.VRHO_SHIFTED)
        out = unshift_mixing_ratio(mt).columns[0]
        np.testing.assert_allclose(out, [0.0, 1.0, 2.0, 4.0])
        assert unshift_mixing_ratio(mt, clip=False).columns[0][0] == -1.0

    def test_clip_count(self):
        R = tiny(Nk=3)
        m, n = clip_end_levels(column(R.fine, [-1.0, -1.0, 2.0, -3.0]))
        assert n == 2 * R.fine.ncols
        assert m.columns[0].tolist() == [0.0, -1.0, 2.0, 0.0]

    def test_single_layer_rejected(self):
        R = tiny(Nk=1)
        with pytest.raises(ValueError):
            shift_mixing_ratio(Field.zeros(Space.VTHETA, R.fine))

    def test_wrong_space(self):
        R = tiny()
        with pytest.raises(LayoutError):
            shift_density(Field.zeros(Space.VTHETA, R.fine))


class TestMixingRatio:
    def test_moist_mass_per_column(self, any_remap, rng):
        dens = densities(any_remap, rng)
        m = rand(rng, Space.VTHETA, any_remap.coarse, 0.5, 1.5)
        fine = any_remap.prolong_mixing_ratio(m, dens)
        fm = moist_column_mass(fine, dens.fine).reshape(4, 2, 4, 2).sum(axis=(1, 3))
        np.testing.assert_allclose(fm, moist_column_mass(m, dens.coarse), rtol=1e-13)

    def test_reversible_away_from_zero(self, any_remap, rng):
        dens = densities(any_remap, rng)
        m = rand(rng, Space.VTHETA, any_remap.coarse, 0.5, 1.5)
        back = any_remap.restrict_mixing_ratio(any_remap.prolong_mixing_ratio(m, dens), dens)
        np.testing.assert_allclose(back.values, m.values, atol=1e-13)

    def test_unlimited_preserves_constants(self, any_remap, rng):
        dens = densities(any_remap, rng)
        out = any_remap.prolong_mixing_ratio_unlimited(Field.constant(Space.VTHETA, any_remap.coarse, 0.3), dens)
        np.testing.assert_allclose(out.values, 0.3, rtol=1e-13)

    def test_positive(self, any_remap, rng):
        dens = densities(any_remap, rng)
        m = Field(Space.VTHETA, any_remap.coarse,
                  rng.uniform(0, 1, dof_count(Space.VTHETA, any_remap.coarse)) ** 6)
        out, lam = any_remap.prolong_mixing_ratios({"m": m}, dens)
        assert out["m"].values.min() >= -1e-13
        assert lam.values.max() > 0

    def test_correlation_exact_without_limiter(self, any_remap, rng):
        dens = densities(any_remap, rng)
        m = rand(rng, Space.VTHETA, any_remap.coarse, 0.5, 1.5)
        alpha, beta = 0.2, 3.0
        n = m.with_values(alpha + beta * m.values)
        lhs = any_remap.prolong_mixing_ratio_unlimited(n, dens)
        rhs = alpha + beta * any_remap.prolong_mixing_ratio_unlimited(m, dens).values
        np.testing.assert_allclose(lhs.values, rhs, atol=1e-12)

    def test_correlation_gap_with_shared_factor(self, bump_remap, rng):
        R = bump_remap
        dens = densities(R, rng)
        m = rand(rng, Space.VTHETA, R.coarse, 0.0, 0.1)
        alpha, beta = 0.2, 3.0
        n = m.with_values(alpha + beta * m.values)
        lam = Field.constant(Space.VTHETA, R.coarse, 0.25)
        bm = R.blend(R.prolong_mixing_ratio_unlimited(m, dens), R.identify_mixing_ratio(m, dens, clip=False), lam)
        bn = R.blend(R.prolong_mixing_ratio_unlimited(n, dens), R.identify_mixing_ratio(n, dens, clip=False), lam)
        one = R.identify_mixing_ratio(Field.constant(Space.VTHETA, R.coarse, 1.0), dens, clip=False)
        expected = 0.25 * alpha * (one.values - 1.0)
        np.testing.assert_allclose(bn.values - (alpha + beta * bm.values), expected, atol=1e-12)

    def test_density_pair_validation(self, flat_remap):
        with pytest.raises(ValueError):
            DryDensityPair(Field.zeros(Space.VRHO, flat_remap.fine), Field.zeros(Space.VRHO, flat_remap.coarse))
        with pytest.raises(LayoutError):
            DryDensityPair(Field.zeros(Space.VTHETA, flat_remap.fine), Field.zeros(Space.VRHO, flat_remap.coarse))


class TestLambda:
    def fields(self, minus, plus):
        R = tiny(Nk=2)
        return R, Field(Space.VTHETA, R.fine, np.repeat(minus, 3)), Field(Space.VTHETA, R.fine, np.repeat(plus, 3))

    def test_hand_value(self):
        R, mm, mp = self.fields([-0.2, 0.6, 0.6, 0.6], [0.3, 0.5, 0.5, 0.5])
        assert R.compute_lambda(mm, mp).values == pytest.approx([0.4] * 3)

    def test_worst_child_wins(self):
        R, mm, mp = self.fields([-0.2, -0.5, 0.6, 0.6], [0.3, 0.5, 0.5, 0.5])
        lam = R.compute_lambda(mm, mp)
        assert lam.values == pytest.approx([0.5] * 3)
        out = R.blend(mm, mp, lam)
        assert out.values.min() == pytest.approx(0.0, abs=1e-16)

    def test_zero_when_positive(self):
        R, mm, mp = self.fields([0.1, 0.2, 0.3, 0.4], [0.1, 0.1, 0.1, 0.1])
        assert (R.compute_lambda(mm, mp).values == 0).all()

    def test_negative_plus_rejected(self):
        R, mm, mp = self.fields([0.1] * 4, [0.1, -0.1, 0.1, 0.1])
        with pytest.raises(ValueError):
            R.compute_lambda(mm, mp)

    def test_tie_boundary_levels(self):
        R = tiny(Nk=3)
        lam = tie_boundary_levels(column(R.coarse, [0.1, 0.3, 0.0, 0.2]))
        assert lam.columns[0].tolist() == [0.3, 0.3, 0.2, 0.2]

    def test_shared_is_max_over_species(self):
        R = tiny(Nk=3)
        a = column(R.fine, [-0.1, 1.0, 1.0, 1.0])
        b = column(R.fine, [1.0, 1.0, 1.0, -0.3])
        p = column(R.fine, [0.1, 1.0, 1.0, 0.1])
        lam = R.shared_lambda({"a": a, "b": b}, {"a": p, "b": p})
        np.testing.assert_allclose(lam.columns[0], [0.5, 0.5, 0.75, 0.75])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["flat", "bump", "hills"]))
def test_scalar_prolongation_is_linear(seed, orography):
    R = make_remapper(orography=orography)
    g = np.random.default_rng(seed)
    x, y = rand(g, Space.VTHETA, R.coarse), rand(g, Space.VTHETA, R.coarse)
    a, b = g.uniform(-3, 3, 2)
    lhs = R.prolong_scalar(a * x + b * y)
    rhs = a * R.prolong_scalar(x) + b * R.prolong_scalar(y)
    np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["flat", "bump", "hills"]))
def test_density_prolongation_mass(seed, orography):
    R = make_remapper(orography=orography)
    g = np.random.default_rng(seed)
    rho = rand(g, Space.VRHO, R.coarse, 0.1, 3.0)
    fine = R.prolong_density(rho)
    np.testing.assert_allclose(R.restrict_density(fine).values, rho.values, rtol=1e-13)
