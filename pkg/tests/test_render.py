"""Camera model tests: projection geometry, shading, occlusion, PGM i/o."""

import numpy as np
import pytest

from domservo.errors import EmptyProjection, InvalidParam
from domservo.mesh import DeformableMesh, Role, make_task_mesh
from domservo.render import (CameraSpec, load_pgm, project, render, save_pgm)


def overhead_camera(center_xy, window, width=64, height=64, mode="depth"):
    return CameraSpec(center=np.array([center_xy[0], center_xy[1], 1.0]),
                      view_axis=np.array([0.0, 0.0, -1.0]),
                      up=np.array([0.0, 1.0, 0.0]),
                      image_width=width, image_height=height,
                      world_window=window, mode=mode)


def test_flat_cloth_depth_is_constant_on_footprint():
    mesh = make_task_mesh("cloth-rect", (7, 8))
    cam = overhead_camera((0.15, 0.175), (0.4, 0.45))
    obs = render(mesh, cam)
    assert obs.mask.any()
    # planar geometry: all foreground pixels at one depth, normalized to 1
    assert np.all(obs.image[obs.mask] == 1.0)
    assert np.all(obs.image[~obs.mask] == 0.0)
    # the footprint must not touch the border: the window exceeds the cloth
    assert not obs.mask[0].any() and not obs.mask[-1].any()
    assert not obs.mask[:, 0].any() and not obs.mask[:, -1].any()


def test_translated_cloth_raises_empty_projection():
    mesh = make_task_mesh("cloth-rect", (7, 8))
    mesh.positions[:, 0] += 10.0
    cam = overhead_camera((0.15, 0.175), (0.4, 0.45))
    with pytest.raises(EmptyProjection):
        render(mesh, cam)


def ridge_mesh(n_cols, ridge_col, height):
    """Two-row triangle strip along x with a tent fold at column ridge_col."""
    xs = np.linspace(0.0, 1.0, n_cols)
    z = np.where(np.arange(n_cols) == ridge_col, height, 0.0)
    pos = np.zeros((2 * n_cols, 3))
    pos[:n_cols, 0] = xs
    pos[n_cols:, 0] = xs
    pos[n_cols:, 1] = 0.4
    pos[:n_cols, 2] = z
    pos[n_cols:, 2] = z
    edges, faces = [], []
    for i in range(n_cols - 1):
        edges.extend([[i, i + 1], [n_cols + i, n_cols + i + 1]])
        faces.append([i, i + 1, n_cols + i])
        faces.append([i + 1, n_cols + i + 1, n_cols + i])
    for i in range(n_cols):
        edges.append([i, n_cols + i])
    edges = np.array(edges)
    d = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1)
    roles = np.full(2 * n_cols, Role.FEEDBACK)
    roles[0] = Role.MANIPULATED
    return DeformableMesh(positions=pos, edges=edges, rest=d,
                          stiff=np.ones(len(edges)), roles=roles,
                          faces=np.array(faces))


def test_lambert_ridge_darkens_at_the_fold():
    n_cols, ridge_col, h = 17, 9, 0.12
    mesh = ridge_mesh(n_cols, ridge_col, h)
    cam = overhead_camera((0.5, 0.2), (1.2, 0.6), width=96, height=48,
                          mode="lambert")
    obs = render(mesh, cam)
    col_mean = np.where(obs.mask.any(axis=0),
                        obs.image.sum(axis=0) / np.maximum(obs.mask.sum(axis=0), 1),
                        np.nan)
    # the fold darkens a symmetric band; locate it by its deficit centroid
    deficit = np.nan_to_num(np.nanmax(col_mean) - col_mean)
    cols = np.arange(len(deficit))
    dip = float((cols * deficit).sum() / deficit.sum())
    # analytic projection of the crest x onto the pixel grid
    crest_x = np.linspace(0.0, 1.0, n_cols)[ridge_col]
    expect = (crest_x - 0.5) / 1.2 * 96 + 96 / 2 - 0.5
    assert abs(dip - expect) <= 1.0
    # flat area far from the fold shades to full intensity
    flat = col_mean[~np.isnan(col_mean)]
    assert flat.max() > 0.999
    assert np.nanmin(col_mean) < 0.95


def test_render_is_deterministic():
    mesh = make_task_mesh("sheet-bend", (7, 8))
    rng = np.random.default_rng(3)
    mesh.positions += rng.normal(scale=0.01, size=mesh.positions.shape)
    cam = overhead_camera((0.15, 0.175), (0.6, 0.6), mode="lambert")
    a = render(mesh, cam)
    b = render(mesh, cam)
    assert a.image.tobytes() == b.image.tobytes()
    assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.occluded_flags, b.occluded_flags)


def occluder_scene():
    """A feedback particle under a quad, another off to the side in the open."""
    pos = np.array([
        [0.0, 0.0, 0.0],      # feedback, hidden under the quad
        [0.5, 0.0, 0.0],      # feedback, in the open
        [-0.2, -0.2, 0.5],    # occluder quad, closer to the camera
        [0.2, -0.2, 0.5],
        [0.2, 0.2, 0.5],
        [-0.2, 0.2, 0.5],
    ])
    edges = np.array([[0, 1], [2, 3], [3, 4], [4, 5], [5, 2]])
    d = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1)
    roles = np.array([Role.FEEDBACK, Role.FEEDBACK, Role.MANIPULATED,
                      Role.UNINFORMATIVE, Role.UNINFORMATIVE, Role.UNINFORMATIVE])
    faces = np.array([[2, 3, 4], [2, 4, 5]])
    return DeformableMesh(positions=pos, edges=edges, rest=d,
                          stiff=np.ones(len(edges)), roles=roles, faces=faces)


def test_occlusion_flags_follow_the_zbuffer():
    mesh = occluder_scene()
    cam = overhead_camera((0.1, 0.0), (1.6, 1.2))
    obs = render(mesh, cam)
    assert obs.occluded_flags.tolist() == [True, False]
    # positions are still reported for occluded particles
    assert np.allclose(obs.feedback_positions[0], [0.0, 0.0, 0.0])


def test_particle_outside_window_counts_as_occluded():
    mesh = occluder_scene()
    mesh.positions[1, 0] = 5.0  # walk the open particle out of the window
    cam = overhead_camera((0.1, 0.0), (1.6, 1.2))
    obs = render(mesh, cam)
    assert obs.occluded_flags.tolist() == [True, True]


def test_project_pixel_mapping():
    cam = overhead_camera((0.0, 0.0), (1.0, 1.0), width=10, height=10)
    pts = np.array([[0.0, 0.0, 0.0], [-0.5, 0.5, 0.0]])
    pix, depth, _, _ = project(cam, pts)
    # window center lands mid-image, top-left corner at pixel (-0.5, -0.5)
    assert np.allclose(pix[0], [4.5, 4.5])
    assert np.allclose(pix[1], [-0.5, -0.5])
    assert np.allclose(depth, [1.0, 1.0])


def test_camera_validation():
    with pytest.raises(InvalidParam):
        CameraSpec(center=np.zeros(3), view_axis=np.array([0, 0, -1.0]),
                   up=np.array([0, 0.7, -0.7]))  # not orthogonal
    with pytest.raises(InvalidParam):
        CameraSpec(center=np.zeros(3), view_axis=np.array([0, 0, -1.0]),
                   up=np.array([0, 1.0, 0]), image_width=4)
    with pytest.raises(InvalidParam):
        CameraSpec(center=np.zeros(3), view_axis=np.array([0, 0, -1.0]),
                   up=np.array([0, 1.0, 0]), mode="rgb")


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    img = rng.random((12, 17))
    p = tmp_path / "img.pgm"
    save_pgm(img, p)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n17 12\n255\n")
    back = load_pgm(p)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_load_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "img.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(InvalidParam):
        load_pgm(p)
