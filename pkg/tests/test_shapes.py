import numpy as np
import pytest

from voxrender import shapes
from voxrender.shapes import Primitive, ShapeRecipe
from voxrender.voxgrid import R_MIN, R_REF, Pose, rigid_transform


def test_sphere_volume():
    g = shapes.voxelize(ShapeRecipe([Primitive("sphere", (0, 0, 0), (0.4,))], resolution=32))
    expected = 4.0 / 3.0 * np.pi * 0.4**3 * 32**3
    assert abs(g.sum() - expected) / expected < 0.05


def test_box_volume_exact_on_lattice():
    # half extent 0.25 covers exactly 16 voxel centres per axis at 32^3
    g = shapes.voxelize(ShapeRecipe([Primitive("box", (0, 0, 0), (0.25, 0.25, 0.25))]))
    assert g.sum() == 16**3


def test_subtract():
    outer = Primitive("sphere", (0, 0, 0), (0.4,))
    inner = Primitive("sphere", (0, 0, 0), (0.2,), subtract=True)
    a = shapes.voxelize(ShapeRecipe([outer]))
    b = shapes.voxelize(ShapeRecipe([outer, inner]))
    c = shapes.voxelize(ShapeRecipe([Primitive("sphere", (0, 0, 0), (0.2,))]))
    assert b.sum() == a.sum() - c.sum()


def test_noise_deterministic_and_rate():
    base = shapes.voxelize(ShapeRecipe([Primitive("sphere", (0, 0, 0), (0.3,))]))
    a = shapes.add_noise(base, 0.5, seed=9)
    b = shapes.add_noise(base, 0.5, seed=9)
    assert a.tobytes() == b.tobytes()
    flip = (a != base).mean()
    assert abs(flip - 0.25) < 0.01      # half the picked voxels keep their value
    assert shapes.add_noise(base, 0.0, 1).tobytes() == base.tobytes()


def test_gen_shapes_errors_and_determinism():
    with pytest.raises(ValueError):
        shapes.gen_shapes("mixed", 0, seed=1)
    with pytest.raises(ValueError):
        shapes.gen_shapes("blobs", 1, seed=1)
    a = shapes.gen_shapes(shapes.FAMILIES, 6, seed=4, resolution=16)
    b = shapes.gen_shapes(shapes.FAMILIES, 6, seed=4, resolution=16)
    for (ra, ga), (rb, gb) in zip(a, b):
        assert ra == rb and ga.tobytes() == gb.tobytes()


@pytest.mark.parametrize("family", shapes.FAMILIES)
def test_random_shapes_survive_extreme_pose(family):
    for recipe, g in shapes.gen_shapes(family, 8, seed=11, resolution=24):
        assert g.sum() > 0
        # the nearest camera with any rotation must not clip the content
        out = rigid_transform(g, Pose(45.0, 35.0, R_MIN))
        sc = (R_REF / R_MIN) ** 3
        assert abs(out.sum() / sc - g.sum()) / g.sum() < 0.05


def test_recipe_dict_roundtrip():
    r = shapes.gen_shapes("mixed", 1, seed=3)[0][0]
    assert ShapeRecipe.from_dict(r.to_dict()) == r
    with pytest.raises(ValueError):
        ShapeRecipe([], resolution=4)


def test_chairs_keep_a_canonical_orientation():
    for recipe, g in shapes.gen_shapes("chairs", 6, seed=8):
        occ = g[..., 0] > 0.5
        h, w, d = np.nonzero(occ)
        n = g.shape[0]
        # the top of every chair is its back, which sits towards -z (large d)
        top = h == h.min()
        assert np.all(d[top] > (n - 1) / 2)
        assert all(p.rotation == (0.0, 0.0, 0.0) for p in recipe.primitives)
        # the x mirror is the only symmetry left
        np.testing.assert_array_equal(occ, occ[:, ::-1])
