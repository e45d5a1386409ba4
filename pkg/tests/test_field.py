import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ncdfield import diffcore as dc
from ncdfield.field import (
    FieldArch,
    FieldParams,
    RayDataset,
    RenderConfig,
    SampleSet,
    TrainConfig,
    TrainState,
    composite,
    embedding_kl_loss,
    init_field,
    photometric_loss,
    pixel_entropy,
    positional_encode,
    render_rays,
    render_view,
    sample_hierarchical,
    sample_stratified,
    total_loss,
    train,
    write_loss_csv,
)
from ncdfield.synth import OracleConfig, Primitive, Scene, make_camera, oracle_embedding, render_rgbd

from oracles import alpha_composite, central_diff, rel_err

TINY = FieldArch(width=8, depth=2, l_pos=2, l_dir=1, emb_dim=3)


# positional encoding

def test_pe_zero():
    np.testing.assert_allclose(positional_encode(0.0, 1), [0, 0, 1])


def test_pe_half():
    np.testing.assert_allclose(positional_encode(0.5, 1), [0.5, 1, 0], atol=1e-15)


def test_pe_identity_when_no_freqs():
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(positional_encode(x, 0), x)


def test_pe_layout():
    out = positional_encode(np.array([[0.25, 0.5, 1.0]]), 2)
    assert out.shape == (1, 15)
    c = 0.5
    np.testing.assert_allclose(out[0, 5:10], [c, np.sin(np.pi * c), np.cos(np.pi * c),
                                              np.sin(2 * np.pi * c), np.cos(2 * np.pi * c)], atol=1e-15)


# samplers

def test_stratified_single():
    s = sample_stratified(1, 2.0, 5.0, 1, np.random.default_rng(0))
    assert s.t.shape == (1, 1) and 2.0 <= s.t[0, 0] <= 5.0


def test_stratified_one_per_bin():
    for seed in range(20):
        t = sample_stratified(3, 0.0, 4.0, 4, np.random.default_rng(seed)).t
        for row in t:
            assert all(k <= v < k + 1 for k, v in enumerate(row))


def test_stratified_deterministic():
    a = sample_stratified(5, 0.1, 3.0, 8, np.random.default_rng(4)).t
    b = sample_stratified(5, 0.1, 3.0, 8, np.random.default_rng(4)).t
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("near,far,k", [(1.0, 1.0, 4), (2.0, 1.0, 4), (-1.0, 1.0, 4), (0.0, 1.0, 0)])
def test_stratified_rejects(near, far, k):
    with pytest.raises(ValueError):
        sample_stratified(1, near, far, k)


def test_hierarchical_degenerate_pdf():
    rng = np.random.default_rng(0)
    coarse = sample_stratified(4, 0.0, 8.0, 8, rng)
    w = np.zeros((4, 8))
    w[:, 3] = 0.7
    out = sample_hierarchical(coarse, w, 32, 0.0, 8.0, rng)
    t = coarse.t
    lo = 0.5 * (t[:, 2] + t[:, 3])
    hi = 0.5 * (t[:, 3] + t[:, 4])
    fine = out.t[~np.isin(out.t, t)].reshape(4, 32)
    assert np.all((fine >= lo[:, None]) & (fine <= hi[:, None]))
    assert np.all(np.diff(out.t, axis=1) >= 0)
    assert not out.fallback.any()


def test_hierarchical_uniform_weights_chi2():
    rng = np.random.default_rng(1)
    k, n_fine = 8, 4000
    coarse = sample_stratified(1, 0.0, 1.0, k, rng)
    out = sample_hierarchical(coarse, np.ones((1, k)), n_fine, 0.0, 1.0, rng)
    t = coarse.t[0]
    edges = np.concatenate([[0.0], 0.5 * (t[1:] + t[:-1]), [1.0]])
    fine = np.sort(np.setdiff1d(out.t[0], t))
    counts, _ = np.histogram(fine, bins=edges)
    assert counts.sum() == n_fine
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_hierarchical_zero_weights_fallback():
    rng = np.random.default_rng(2)
    coarse = sample_stratified(3, 1.0, 2.0, 4, rng)
    w = np.ones((3, 4))
    w[1] = 0
    out = sample_hierarchical(coarse, w, 16, 1.0, 2.0, rng)
    assert out.fallback.tolist() == [False, True, False]
    assert np.all((out.t >= 1.0) & (out.t <= 2.0))
    assert np.all(np.diff(out.t, axis=1) >= 0)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_hierarchical_always_sorted(seed):
    rng = np.random.default_rng(seed)
    coarse = sample_stratified(5, 0.5, 6.0, 7, rng)
    out = sample_hierarchical(coarse, rng.uniform(size=(5, 7)) ** 4, 9, 0.5, 6.0, rng)
    assert np.all(np.diff(out.t, axis=1) >= 0)
    assert out.t.shape == (5, 16)


# compositing

def _vals(c):
    return [dc.Tensor(np.asarray(c, dtype=np.float64).reshape(1, -1, 3))]


def test_transparent_medium():
    with dc.precision(64):
        w, (c,), res = composite(dc.Tensor(np.zeros((1, 4))), np.ones((1, 4)), _vals(np.ones((4, 3))))
    assert np.all(w.data == 0) and np.all(c.data == 0) and w.data.sum() == 0
    assert res.data[0] == 1.0


def test_single_sample_half():
    color = np.array([0.2, 0.4, 0.8])
    with dc.precision(64):
        w, (c,), _ = composite(dc.Tensor([[math.log(2)]]), np.ones((1, 1)), _vals(color))
    assert w.data[0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(c.data[0], 0.5 * color)


def test_two_samples_recurrence():
    with dc.precision(64):
        w, _, _ = composite(dc.Tensor([[math.log(2)] * 2]), np.ones((1, 2)), _vals(np.ones((2, 3))))
    np.testing.assert_allclose(w.data[0], [0.5, 0.25])
    assert w.data.sum() == pytest.approx(0.75)


def constant_field(arch, density, color_logit=0.0, emb=None, seed=0):
    """Field whose networks output the same (density, color, embedding) everywhere."""
    f = init_field(arch, seed)
    for k in f.weights:
        if ".w" in k:
            f.weights[k][:] = 0
    for net in ("coarse", "fine"):
        f.weights[f"{net}.density.b"][:] = np.log(np.expm1(density))
        f.weights[f"{net}.color1.b"][:] = color_logit
        if emb is not None:
            f.weights[f"{net}.embed.b"][:] = emb
    return f


def test_render_ray_single_sample_through_network():
    with dc.precision(64):
        f = constant_field(TINY, density=math.log(2), color_logit=0.0)
        out = render_rays(f.tensors(), f, "fine", np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]),
                          SampleSet(np.array([[1.0]])), delta_cap=1.0)
    assert out.weights.data[0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(out.color.data[0], 0.25)  # sigmoid(0) = 0.5, times w


def test_render_matches_loop_oracle():
    rng = np.random.default_rng(0)
    with dc.precision(64):
        f = init_field(TINY, seed=3)
        params = f.tensors()
        o = rng.normal(size=(20, 3)) * 0.2
        d = rng.normal(size=(20, 3))
        s = sample_stratified(20, 0.1, 2.0, 6, rng)
        out = render_rays(params, f, "coarse", o, d, s, delta_cap=0.3)
        from ncdfield.field import field_forward
        pts = o[:, None] + s.t[..., None] * d[:, None]
        unit = np.broadcast_to((d / np.linalg.norm(d, axis=1, keepdims=True))[:, None], pts.shape)
        rgb, emb, sig = field_forward(params, f.arch, "coarse", pts.reshape(-1, 3), unit.reshape(-1, 3))
    rgb, emb, sig = rgb.data.reshape(20, 6, 3), emb.data.reshape(20, 6, 3), sig.data.reshape(20, 6)
    deltas = s.deltas(0.3) * np.linalg.norm(d, axis=1, keepdims=True)
    for r in range(20):
        c_ref, w_ref, T_end = alpha_composite(sig[r], deltas[r], rgb[r])
        e_ref, _, _ = alpha_composite(sig[r], deltas[r], emb[r])
        np.testing.assert_allclose(out.color.data[r], c_ref, atol=1e-12)
        np.testing.assert_allclose(out.logits.data[r], e_ref, atol=1e-12)
        np.testing.assert_allclose(out.weights.data[r], w_ref, atol=1e-12)
        assert out.weights.data[r].sum() + out.transmittance.data[r] == pytest.approx(1.0, abs=1e-12)
        assert out.depth.data[r] == pytest.approx((w_ref * s.t[r]).sum())


def test_render_gradcheck():
    rng = np.random.default_rng(5)
    with dc.precision(64):
        f = init_field(TINY, seed=1)
        o = rng.normal(size=(4, 3)) * 0.1
        d = rng.normal(size=(4, 3))
        s = sample_stratified(4, 0.1, 1.5, 5, rng)
        target_c = rng.uniform(size=(4, 3))
        target_e = rng.normal(size=(4, 3))

        def loss_of(params):
            out = render_rays(params, f, "fine", o, d, s, delta_cap=0.5)
            lp = photometric_loss(out.color, out.color, target_c)
            return total_loss(lp, embedding_kl_loss(target_e, out.logits), 0.7)

        params = f.tensors(requires_grad=True)
        grads = dc.gradients(loss_of(params), params)
        for name in ("fine.trunk0.w", "fine.density.b", "fine.embed.w", "fine.color0.w"):
            def scalar(v, name=name):
                p = f.tensors()
                p[name] = dc.Tensor(v)
                return float(loss_of(p).data)

            assert rel_err(grads[name], central_diff(scalar, f.weights[name])) <= 1e-3, name
        assert np.all(grads["coarse.trunk0.w"] == 0)


# losses

def test_photometric_examples():
    c = np.array([[0.1, 0.2, 0.3]])
    assert photometric_loss(c, c, c).data == 0
    assert float(photometric_loss(c, c + [0.1, 0, 0], c).data) == pytest.approx(0.01)


def test_kl_examples():
    with dc.precision(64):
        same = np.array([[0.3, -1.0, 2.0]])
        assert abs(float(embedding_kl_loss(same, same).data)) < 1e-12
        p_logits = np.log([[0.5, 0.5]])
        q_logits = np.log([[0.9, 0.1]])
        expect = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
        assert float(embedding_kl_loss(p_logits, q_logits).data) == pytest.approx(expect, rel=1e-12)
        assert expect == pytest.approx(0.5108, abs=1e-4)


def test_kl_mask_and_shape():
    with dc.precision(64):
        a = np.array([[0.0, 1.0], [3.0, 0.0]])
        b = np.array([[0.0, 1.0], [0.0, 3.0]])
        assert abs(float(embedding_kl_loss(a, b, mask=np.array([1, 0])).data)) < 1e-12
        with pytest.raises(ValueError):
            embedding_kl_loss(a, b[:, :1])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    with dc.precision(64):
        v = float(embedding_kl_loss(rng.normal(size=(8, 5)) * 3, rng.normal(size=(8, 5)) * 3).data)
    assert v >= -1e-12


def test_total_loss():
    assert float(total_loss(1.0, 2.0, 0.0).data) == 1.0
    assert float(total_loss(1.0, 2.0, 0.5).data) == pytest.approx(2.0)
    vals = [float(total_loss(1.5, 2.0, lam).data) for lam in (0.0, 1.0, 2.0)]
    assert vals[2] - vals[1] == pytest.approx(vals[1] - vals[0])
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -0.1)


def test_pixel_entropy():
    assert pixel_entropy([0, 1, 0]) == 0
    assert pixel_entropy(np.full(37, 1 / 37)) == pytest.approx(math.log(37))
    assert pixel_entropy(np.full(37, 1 / 37)) == pytest.approx(3.6109, abs=1e-4)
    assert pixel_entropy([0.5, 0.5]) == pytest.approx(0.6931, abs=1e-4)
    with pytest.raises(ValueError, match="negative"):
        pixel_entropy([1.5, -0.5])
    with pytest.raises(ValueError, match="sum"):
        pixel_entropy([0.5, 0.4])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=10).filter(lambda v: sum(v) > 0.1))
def test_entropy_bounds(v):
    p = np.array(v) / sum(v)
    h = pixel_entropy(p)
    assert -1e-12 <= h <= math.log(len(p)) + 1e-12


# rendering whole views

def test_zero_embedding_field_is_uniform():
    arch = FieldArch(width=16, depth=2, l_pos=3, l_dir=1, emb_dim=37)
    f = init_field(arch, seed=0, zero_embedding=True)
    cam = make_camera((0, 0, 0), (0, 1, 0), 6, 5)
    view = render_view(f, cam, RenderConfig(n_coarse=8, n_fine=8, far=4.0))
    assert view.logits.shape == (5, 6, 37) and view.entropy.shape == (5, 6)
    np.testing.assert_allclose(view.entropy, math.log(37), atol=1e-6)


def test_checkpoint_roundtrip(tmp_path):
    f = init_field(TINY, seed=9)
    f.save(tmp_path / "f.tens", extra_meta={"note": "x"})
    g, meta, rest = FieldParams.load(tmp_path / "f.tens")
    assert g.arch == f.arch and meta["note"] == "x" and rest == {}
    for k in f.weights:
        np.testing.assert_array_equal(g.weights[k], f.weights[k])


# training on a tiny scene

def tiny_dataset(size=16, n_views=1, sigma=0.0):
    scene = Scene(
        primitives=[
            Primitive("box", (0.0, 2.0, 0.0), size=(4.0, 0.2, 4.0), class_id=0, instance_id=0, color=(0.8, 0.7, 0.6)),
            Primitive("sphere", (0.0, 1.2, 0.0), radius=0.35, class_id=1, instance_id=1, color=(0.2, 0.3, 0.9)),
        ],
        room_min=(-2, -2, -2), room_max=(2, 2.1, 2), known_classes=[0, 1],
    )
    cams = [make_camera((0.3 * i, -0.5, 0.2 * i), (0, 1.5, 0), size, size) for i in range(n_views)]
    frames = [render_rgbd(scene, c) for c in cams]
    cfg = OracleConfig(sigma=sigma, dim=2, margin=3.0)
    embs = [oracle_embedding(scene, f, cfg, i).logits for i, f in enumerate(frames)]
    data = RayDataset.from_frames(cams, [f.color for f in frames], embs,
                                  [f.labels != scene.background_class for f in frames])
    arch = FieldArch(width=32, depth=2, l_pos=4, l_dir=1, emb_dim=2,
                     bounds_min=scene.room_min, bounds_max=scene.room_max)
    return scene, cams, frames, data, arch


def small_cfg(**kw):
    base = dict(batch_size=128, n_coarse=8, n_fine=8, near=0.1, far=4.0, lr=1e-3, iterations=500, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def full_frame_kl(state, data, cfg):
    from ncdfield.field import render_coarse_fine
    _, fine = render_coarse_fine(state.params.tensors(), state.params, data.origins, data.dirs,
                                 cfg.render_config())
    return float(embedding_kl_loss(data.logits, fine.logits, mask=data.valid).data)


@pytest.fixture(scope="module")
def paired_runs():
    _, _, _, data, arch = tiny_dataset()
    with_e = train(data, small_cfg(lam=1.0), arch, log_every=0)
    without_e = train(data, small_cfg(lam=0.0), arch, log_every=0)
    return data, with_e, without_e


def test_training_reduces_loss(paired_runs):
    _, run, _ = paired_runs
    first = np.mean([h[3] for h in run.history[:10]])
    last = np.mean([h[3] for h in run.history[-10:]])
    assert last < first
    assert run.iteration == 500


def test_lambda_zero_leaves_embedding_untrained(paired_runs):
    data, with_e, without_e = paired_runs
    cfg = small_cfg()
    assert full_frame_kl(without_e, data, cfg) >= full_frame_kl(with_e, data, cfg)


def test_training_deterministic_and_resumable(tmp_path):
    _, _, _, data, arch = tiny_dataset(size=8)
    a = train(data, small_cfg(iterations=12), arch, log_every=0)
    b = train(data, small_cfg(iterations=12), arch, log_every=0)
    for k in a.params.weights:
        assert a.params.weights[k].tobytes() == b.params.weights[k].tobytes()

    half = train(data, small_cfg(iterations=6), arch, log_every=0)
    half.save(tmp_path / "ck.tens", small_cfg(iterations=6))
    resumed, meta = TrainState.load(tmp_path / "ck.tens")
    assert meta["iteration"] == 6 and meta["train"]["lam"] == 1.0
    resumed = train(data, small_cfg(iterations=12), state=resumed, log_every=0)
    for k in a.params.weights:
        assert a.params.weights[k].tobytes() == resumed.params.weights[k].tobytes(), k


def test_training_divergence_is_reported():
    from ncdfield.field.train import TrainingDiverged
    _, _, _, data, arch = tiny_dataset(size=8)
    bad = RayDataset(data.origins, data.dirs, data.colors, data.logits, data.valid)
    bad.colors = np.full_like(data.colors, np.inf)
    with pytest.raises(TrainingDiverged, match="iteration 0"):
        train(bad, small_cfg(iterations=3), arch, log_every=0)


def test_loss_csv(tmp_path):
    write_loss_csv(tmp_path / "loss.csv", [(0, 1.0, 2.0, 3.0), (1, 0.5, 1.0, 1.5)])
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines == ["iteration,L_p,L_e,L", "0,1,2,3", "1,0.5,1,1.5"]


def test_trained_field_argmax_accuracy():
    scene, cams, frames, data, arch = tiny_dataset(size=24, n_views=3)
    cfg = small_cfg(iterations=1500, batch_size=256)
    state = train(data, cfg, arch, log_every=0)
    accs = []
    for cam, fr in zip(cams, frames):
        view = render_view(state.params, cam, cfg.render_config())
        valid = fr.labels != scene.background_class
        accs.append((view.logits.argmax(-1) == fr.labels)[valid].mean())
    assert np.mean(accs) >= 0.9
