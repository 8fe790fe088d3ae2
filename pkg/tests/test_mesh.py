import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from nestfield.mesh import (
    ExtrudedMesh,
    HorizontalMesh,
    Orography,
    VerticalGrid,
    build_nested_pair,
    cell_volume,
    face_area,
    shifted_geometry,
)


def quadrature_volume(zb, zt, dx, dy):
    """Volume between two bilinear surfaces over a dx*dy rectangle, by 2-point Gauss."""
    g = 0.5 + np.array([-1, 1]) / (2 * np.sqrt(3))
    total = 0.0
    for s in g:
        for t in g:
            def bil(c):
                return c[0] * (1 - s) * (1 - t) + c[1] * s * (1 - t) + c[2] * (1 - s) * t + c[3] * s * t
            total += 0.25 * (bil(zt) - bil(zb))
    return total * dx * dy


def corner_heights(z, i, j, k):
    nx, ny = z.shape[:2]
    ip, jp = (i + 1) % nx, (j + 1) % ny
    return [z[i, j, k], z[ip, j, k], z[i, jp, k], z[ip, jp, k]]


class TestHorizontalAndVertical:
    def test_spacing(self):
        h = HorizontalMesh(4, 2, 8.0, 6.0)
        assert (h.dx, h.dy, h.ncols) == (2.0, 3.0, 8)

    def test_coarsen(self):
        c = HorizontalMesh(8, 4, 1.0, 1.0).coarsen(2)
        assert (c.nx, c.ny, c.Lx) == (4, 2, 1.0)

    @pytest.mark.parametrize("r", [1, 3])
    def test_coarsen_rejects_bad_factor(self, r):
        with pytest.raises(ValueError):
            HorizontalMesh(8, 8, 1.0, 1.0).coarsen(r)

    def test_zero_cells_rejected(self):
        with pytest.raises(ValueError):
            HorizontalMesh(0, 4, 1.0, 1.0)

    @pytest.mark.parametrize("levels", [[0.0, 2.0, 1.0], [1.0, 2.0], [0.0]])
    def test_vertical_grid_validation(self, levels):
        with pytest.raises(ValueError):
            VerticalGrid(np.array(levels))

    def test_uniform_grid(self):
        v = VerticalGrid.uniform(4, 2000.0)
        assert v.Nk == 4 and v.z_top == 2000.0
        np.testing.assert_allclose(np.diff(v.z_levels), 500.0)


class TestBuildNestedPair:
    def test_flat_tiling(self):
        pair = build_nested_pair(HorizontalMesh(4, 4, 4.0, 4.0), VerticalGrid.uniform(2, 2.0), 2)
        assert (pair.coarse.nx, pair.coarse.ny) == (2, 2)
        vf = pair.fine.cell_volume.reshape(2, 2, 2, 2, 2).sum(axis=(1, 3))
        np.testing.assert_allclose(vf, pair.coarse.cell_volume, rtol=1e-13)

    def test_bump_breaks_volume_tiling(self):
        h = HorizontalMesh(4, 4, 4.0, 4.0)
        v = VerticalGrid.uniform(2, 4.0)
        pair = build_nested_pair(h, v, 2, Orography.bump(h, (1, 1), 1.0))
        zf, zc = pair.fine.vertex_z, pair.coarse.vertex_z
        # oracle: quadrature of both volume sets from the vertex heights
        fine = np.array([[[quadrature_volume(corner_heights(zf, i, j, k), corner_heights(zf, i, j, k + 1), 1, 1)
                           for k in range(2)] for j in range(4)] for i in range(4)])
        coarse = np.array([[[quadrature_volume(corner_heights(zc, i, j, k), corner_heights(zc, i, j, k + 1), 2, 2)
                             for k in range(2)] for j in range(2)] for i in range(2)])
        np.testing.assert_allclose(pair.fine.cell_volume, fine, rtol=1e-13)
        np.testing.assert_allclose(pair.coarse.cell_volume, coarse, rtol=1e-13)
        sums = fine.reshape(2, 2, 2, 2, 2).sum(axis=(1, 3))
        assert np.abs(sums - coarse).max() > 1e-3

    def test_coarse_vertices_copied_from_fine(self):
        h = HorizontalMesh(8, 8, 8.0, 8.0)
        oro = Orography.from_function(h, lambda x, y: 0.3 * np.sin(x) ** 2 + 0.1 * y)
        pair = build_nested_pair(h, VerticalGrid.uniform(3, 10.0), 2, oro)
        np.testing.assert_array_equal(pair.coarse.vertex_z, pair.fine.vertex_z[::2, ::2])

    def test_non_divisible_refinement(self):
        with pytest.raises(ValueError):
            build_nested_pair(HorizontalMesh(6, 6, 6.0, 6.0), VerticalGrid.uniform(1, 1.0), 4)

    def test_orography_reaching_top(self):
        h = HorizontalMesh(4, 4, 4.0, 4.0)
        with pytest.raises(ValueError):
            build_nested_pair(h, VerticalGrid.uniform(2, 1.0), 2, Orography.bump(h, (0, 0), 1.0))

    def test_negative_orography(self):
        h = HorizontalMesh(4, 4, 4.0, 4.0)
        with pytest.raises(ValueError):
            build_nested_pair(h, VerticalGrid.uniform(2, 1.0), 2, Orography.bump(h, (0, 0), -0.1))

    def test_terrain_following_rule(self):
        h = HorizontalMesh(2, 2, 2.0, 2.0)
        oro = Orography.bump(h, (0, 0), 0.5)
        z = oro.terrain_following(VerticalGrid(np.array([0.0, 1.0, 2.0])))
        np.testing.assert_allclose(z[0, 0], [0.5, 1.25, 2.0])
        np.testing.assert_allclose(z[1, 1], [0.0, 1.0, 2.0])


class TestNesting:
    def test_cells_partition(self):
        pair = build_nested_pair(HorizontalMesh(6, 6, 6.0, 6.0), VerticalGrid.uniform(2, 2.0), 3)
        n = pair.nesting
        seen = [c for I in range(2) for J in range(2) for k in range(2) for c in n.cells_of(I, J, k)]
        assert all(len(n.cells_of(I, J, 0)) == 9 for I in range(2) for J in range(2))
        assert sorted(seen) == sorted((i, j, k) for i in range(6) for j in range(6) for k in range(2))

    def test_face_partition_is_exhaustive(self):
        r = 2
        pair = build_nested_pair(HorizontalMesh(4, 4, 4.0, 4.0), VerticalGrid.uniform(1, 1.0), r)
        n = pair.nesting
        exterior = {f for d in "xy" for I in range(2) for J in range(2) for f in n.faces_of(d, I, J, 0)}
        interior = set(n.interior_faces())
        everything = {(d, i, j, 0) for d in "xy" for i in range(4) for j in range(4)}
        assert exterior.isdisjoint(interior)
        assert exterior | interior == everything
        assert all(len(n.faces_of(d, 0, 0, 0)) == r for d in "xy")
        assert len(n.faces_of("z", 0, 0, 0)) == r * r

    def test_flat_face_areas_tile(self):
        pair = build_nested_pair(HorizontalMesh(6, 6, 3.0, 3.0), VerticalGrid.uniform(2, 2.0), 3)
        fa, ca = pair.fine.face_area, pair.coarse.face_area
        for d in ("x", "y", "z"):
            for I in range(2):
                for J in range(2):
                    faces = pair.nesting.faces_of(d, I, J, 1)
                    total = sum(fa[d][i, j, k] for _, i, j, k in faces)
                    assert total == pytest.approx(ca[d][I, J, 1], rel=1e-13)

    def test_parent_column(self):
        pair = build_nested_pair(HorizontalMesh(4, 4, 4.0, 4.0), VerticalGrid.uniform(1, 1.0), 2)
        assert pair.nesting.parent_column.reshape(4, 4)[3, 1] == 1 * 2 + 0

    def test_coarse_index_checked(self):
        pair = build_nested_pair(HorizontalMesh(4, 4, 4.0, 4.0), VerticalGrid.uniform(1, 1.0), 2)
        with pytest.raises(IndexError):
            pair.nesting.cells_of(2, 0, 0)


class TestMeasures:
    def test_box_volume(self):
        h = HorizontalMesh(2, 2, 2.0, 2.0)
        mesh = build_nested_pair(h, VerticalGrid.uniform(1, 2.0), 2).fine
        assert cell_volume(mesh, (0, 1, 0)) == pytest.approx(2.0)

    def test_sloped_top_volume(self):
        h = HorizontalMesh(4, 1, 4.0, 1.0)
        z = np.zeros((4, 1, 2))
        z[:, 0, 1] = [3.0, 4.0, 5.0, 6.0]  # top rises linearly in x
        mesh = ExtrudedMesh(h, VerticalGrid(np.array([0.0, 10.0])), z)
        # cell 1 spans x in [1, 2]: mean height 4.5, base area 1
        assert cell_volume(mesh, (1, 0, 0)) == pytest.approx(4.5, rel=1e-14)

    def test_shifted_bottom_half_cell(self):
        mesh = build_nested_pair(HorizontalMesh(2, 2, 2.0, 2.0), VerticalGrid.uniform(2, 4.0), 2).fine
        assert mesh.shifted.cell_volume[0, 0, 0] == pytest.approx(1.0)

    def test_flat_face_areas(self):
        mesh = build_nested_pair(HorizontalMesh(2, 2, 2.0, 2.0), VerticalGrid.uniform(1, 2.0), 2).fine
        assert face_area(mesh, ("x", 0, 0, 0)) == pytest.approx(2.0)
        assert face_area(mesh, ("z", 1, 0, 1)) == pytest.approx(1.0)

    def test_trapezoid_lateral_face(self):
        h = HorizontalMesh(2, 2, 2.0, 2.0)
        z = np.zeros((2, 2, 2))
        z[:, :, 1] = 4.0
        z[1, 0, 1], z[1, 1, 1] = 3.0, 5.0
        mesh = ExtrudedMesh(h, VerticalGrid(np.array([0.0, 10.0])), z)
        # east face of cell (0, 0) has vertical edges of height 3 and 5, width 1
        assert face_area(mesh, ("x", 0, 0, 0)) == pytest.approx(4.0)

    def test_planar_sloped_top_face(self):
        h = HorizontalMesh(4, 4, 4.0, 4.0)
        oro = Orography.from_function(h, lambda x, y: 0.5 * x)
        mesh = ExtrudedMesh(h, VerticalGrid(np.array([0.0, 10.0])), oro.terrain_following(
            VerticalGrid(np.array([0.0, 10.0]))))
        # bottom face of cell (1, 1): plane of slope 0.5 in x over a unit square
        assert face_area(mesh, ("z", 1, 1, 0)) == pytest.approx(np.sqrt(1.25), rel=1e-14)

    def test_nonplanar_face_area_bounded_by_surface_area(self):
        h = HorizontalMesh(2, 2, 2.0, 2.0)
        z = np.zeros((2, 2, 2))
        z[:, :, 1] = 5.0
        z[1, 1, 0] = 1.0  # twists the bottom face of cell (0, 0)
        mesh = ExtrudedMesh(h, VerticalGrid(np.array([0.0, 10.0])), z)
        c = [0.0, 0.0, 0.0, 1.0]

        def density(t, s):
            zx = (c[1] - c[0]) * (1 - t) + (c[3] - c[2]) * t
            zy = (c[2] - c[0]) * (1 - s) + (c[3] - c[1]) * s
            return np.sqrt(1 + zx ** 2 + zy ** 2)

        true_area, _ = integrate.dblquad(density, 0, 1, 0, 1)
        a = face_area(mesh, ("z", 0, 0, 0))
        assert 1.0 < a <= true_area

    @pytest.mark.parametrize("cell", [(2, 0, 0), (0, 0, 1), (-1, 0, 0)])
    def test_cell_index_out_of_range(self, cell):
        mesh = build_nested_pair(HorizontalMesh(2, 2, 2.0, 2.0), VerticalGrid.uniform(1, 2.0), 2).fine
        with pytest.raises(IndexError):
            cell_volume(mesh, cell)

    @pytest.mark.parametrize("face", [("x", 0, 0, 1), ("z", 0, 0, 2), ("w", 0, 0, 0)])
    def test_face_index_out_of_range(self, face):
        mesh = build_nested_pair(HorizontalMesh(2, 2, 2.0, 2.0), VerticalGrid.uniform(1, 2.0), 2).fine
        with pytest.raises(IndexError):
            face_area(mesh, face)

    def test_dump(self, tmp_path):
        mesh = build_nested_pair(HorizontalMesh(2, 2, 2.0, 2.0), VerticalGrid.uniform(2, 2.0), 2).fine
        mesh.dump(tmp_path / "m.txt")
        rows = (tmp_path / "m.txt").read_text().splitlines()
        assert len(rows) == 8
        i, j, k, v = rows[1].split()
        assert (i, j, k) == ("0", "0", "1") and float(v) == pytest.approx(1.0)


class TestShifted:
    def _column(self, levels):
        v = VerticalGrid(np.array(levels, dtype=float))
        mesh = build_nested_pair(HorizontalMesh(2, 2, 2.0, 2.0), v, 2).fine
        return shifted_geometry(mesh)

    def test_uniform_nk2(self):
        s = self._column([0, 2, 4])
        np.testing.assert_allclose(np.diff(s.vertex_z[0, 0]), [1.0, 2.0, 1.0])

    def test_single_layer(self):
        s = self._column([0, 2])
        assert s.Nk == 2
        np.testing.assert_allclose(np.diff(s.vertex_z[0, 0]), [1.0, 1.0])

    def test_stretched(self):
        s = self._column([0, 1, 3])
        np.testing.assert_allclose(s.vertex_z[1, 1], [0.0, 0.5, 2.0, 3.0])

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(0.0, 0.9)))
    def test_column_volume_identity(self, heights):
        h = HorizontalMesh(4, 4, 4.0, 4.0)
        pair = build_nested_pair(h, VerticalGrid(np.array([0.0, 0.5, 1.5, 3.0])), 2, Orography(heights))
        for mesh in (pair.fine, pair.coarse):
            np.testing.assert_allclose(mesh.shifted.cell_volume.sum(axis=2),
                                       mesh.cell_volume.sum(axis=2), rtol=1e-13)

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(0.0, 0.9)))
    def test_measures_positive(self, heights):
        h = HorizontalMesh(4, 4, 4.0, 4.0)
        pair = build_nested_pair(h, VerticalGrid.uniform(2, 2.0), 2, Orography(heights))
        for mesh in (pair.fine, pair.coarse):
            assert mesh.cell_volume.min() > 0 and mesh.shifted.cell_volume.min() > 0
            assert all(a.min() > 0 for a in mesh.face_area.values())
