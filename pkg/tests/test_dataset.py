import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blurkit.blur_model import ExposureInterval, FrameSequence, average_frames, srgb_to_linear
from blurkit.dataset import (
    AnalyticFlowOracle,
    ClipManifest,
    CorpusConfig,
    SceneObject,
    SceneSpec,
    analytic_flow,
    duplicate_interpolator,
    generate_corpus,
    ingest_clip,
    load_task,
    ownership,
    plan_corpus,
    render_clip,
    render_frame,
    save_task,
)
from blurkit.errors import ConfigurationError, DomainError, IngestionError, UnsupportedOperationError
from blurkit.imageio import write_png


def disk_scene(v=(10.0, 0.0), pos=(32.0, 32.0), r=6.0, size=64, **kw):
    return SceneSpec(size, size, (SceneObject("disk", r, (1.0, 1.0, 1.0), pos, v),), **kw)


def centroid(img):
    w = srgb_to_linear(img).sum(axis=-1)
    ys, xs = np.mgrid[: img.shape[0], : img.shape[1]] + 0.5
    return np.array([(w * xs).sum() / w.sum(), (w * ys).sum() / w.sum()])


class TestScene:
    def test_static_rejected(self):
        with pytest.raises(ConfigurationError):
            disk_scene(v=(0.0, 0.0))

    def test_off_canvas_rejected(self):
        with pytest.raises(ConfigurationError):
            disk_scene(v=(100.0, 0.0))

    def test_static_object_renders_constant(self):
        still = SceneObject("rectangle", (5, 3), (0.2, 0.8, 0.3), (20, 20))
        mover = SceneObject("disk", 4, (0.9, 0.1, 0.1), (40, 40), (0.0, 5.0))
        scene = SceneSpec(64, 64, (still, mover))
        a, b = render_frame(scene, -1.0), render_frame(scene, 1.2)
        np.testing.assert_array_equal(a[10:30, 10:30], b[10:30, 10:30])

    def test_time_domain(self):
        with pytest.raises(DomainError):
            render_frame(disk_scene(), 1.6)

    def test_deterministic_bytes(self):
        scene = disk_scene(background_seed=7)
        assert render_frame(scene, 0.3).tobytes() == render_frame(scene, 0.3).tobytes()

    @pytest.mark.parametrize("t", [-1.0, -0.3, 0.0, 0.45, 1.0])
    def test_centroid_tracks_velocity(self, t):
        scene = disk_scene(v=(10.0, 0.0))
        img = render_frame(scene, t, draw_background=False)
        np.testing.assert_allclose(centroid(img), [32.0 + 10.0 * t, 32.0], atol=0.5)

    def test_values_in_range(self):
        img = render_frame(disk_scene(background_seed=3), 0.1)
        assert img.shape == (64, 64, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestClip:
    def test_tiling(self):
        clip = render_clip(disk_scene(), 16, ExposureInterval(-0.5, 0.5))
        assert len(clip) == 16
        for k, iv in enumerate(clip.intervals):
            assert iv.duration == pytest.approx(1 / 16)
            assert iv.start == pytest.approx(-0.5 + k / 16)
        for a, b in zip(clip.intervals[:-1], clip.intervals[1:]):
            assert a.end == b.start
        assert clip.intervals[0].start == -0.5 and clip.intervals[-1].end == 0.5

    def test_too_few_samples(self):
        with pytest.raises(ConfigurationError):
            render_clip(disk_scene(), 1, ExposureInterval(-0.5, 0.5))

    def test_reproducible(self):
        a = render_clip(disk_scene(), 4, ExposureInterval(0, 0.5))
        b = render_clip(disk_scene(), 4, ExposureInterval(0, 0.5))
        assert a.frames.tobytes() == b.frames.tobytes()


class TestFlow:
    def test_zero_interval(self):
        flow, occ = analytic_flow(disk_scene(), 0.2, 0.2)
        assert not flow.any() and not occ.any()

    def test_translation(self):
        scene = disk_scene(v=(10.0, 0.0))
        flow, _ = analytic_flow(scene, -0.5, 0.3)
        disk = ownership(scene, -0.5) == 0
        assert disk.sum() > 50
        np.testing.assert_allclose(flow[disk], np.tile([8.0, 0.0], (disk.sum(), 1)), atol=1e-12)
        assert not flow[~disk].any()

    def test_overlap_ownership_brute_force(self):
        a = SceneObject("disk", 8, (1, 0, 0), (28, 32), (5.0, 0.0))
        b = SceneObject("rectangle", (6, 6), (0, 0, 1), (36, 32), (0.0, -7.0), 0.5, 0.3)
        scene = SceneSpec(64, 64, (a, b))
        flow, _ = analytic_flow(scene, 0.0, 0.4)
        for yy in range(20, 45):
            for xx in range(15, 50):
                px, py = xx + 0.5, yy + 0.5
                in_b = b.inside(np.array(px), np.array(py), 0.0)
                in_a = a.inside(np.array(px), np.array(py), 0.0)
                if in_b:
                    th = 0.5 * 0.4
                    dx, dy = px - 36, py - 32
                    expect = (36 + np.cos(th) * dx - np.sin(th) * dy - px,
                              32 - 7 * 0.4 + np.sin(th) * dx + np.cos(th) * dy - py)
                elif in_a:
                    expect = (5 * 0.4, 0.0)
                else:
                    expect = (0.0, 0.0)
                np.testing.assert_allclose(flow[yy, xx], expect, atol=1e-9)

    def test_occlusion(self):
        front = SceneObject("disk", 10, (0, 1, 0), (32, 32), (0.0, 0.0))
        back = SceneObject("disk", 5, (1, 0, 0), (22, 32), (10.0, 0.0))
        scene = SceneSpec(64, 64, (back, front))
        _, occ = analytic_flow(scene, -0.5, 1.0)
        owner = ownership(scene, -0.5)
        # the back disk slides under the front one
        assert occ[owner == 0].all()

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
    def test_composition(self, t0, t1, t2):
        scene = SceneSpec(64, 64, (
            SceneObject("disk", 6, (1, 1, 1), (30, 30), (6.0, 4.0)),
            SceneObject("rectangle", (4, 3), (0, 1, 0), (36, 34), (-5.0, 2.0)),
        ))
        f01, occ01 = analytic_flow(scene, t0, t1)
        f12, _ = analytic_flow(scene, t1, t2)
        f02, _ = analytic_flow(scene, t0, t2)
        o0 = ownership(scene, t0)
        vel = {0: (6.0, 4.0), 1: (-5.0, 2.0)}
        for k, v in vel.items():
            m = (o0 == k) & ~occ01
            if not m.any():
                continue
            # translation-only objects carry one flow vector each
            step12 = np.array(v) * (t2 - t1)
            np.testing.assert_allclose(f02[m], f01[m] + step12, atol=1e-9)
            owned1 = ownership(scene, t1) == k
            if owned1.any():
                np.testing.assert_allclose(f12[owned1], np.tile(step12, (owned1.sum(), 1)), atol=1e-9)

    def test_oracle(self):
        scene = disk_scene()
        oracle = AnalyticFlowOracle()
        a, b = render_frame(scene, -0.5), render_frame(scene, 0.5)
        oracle.register(a, scene, -0.5)
        oracle.register(b, scene, 0.5)
        np.testing.assert_array_equal(oracle(a, b), analytic_flow(scene, -0.5, 0.5)[0])
        with pytest.raises(ConfigurationError):
            oracle(a, np.zeros_like(a))


def write_clip(root, n=4, size=(6, 5), fps=240.0, color_space="srgb", seed=0):
    rng = np.random.default_rng(seed)
    names = []
    for i in range(n):
        name = f"{i:05d}.png"
        write_png(root / name, rng.random((*size, 3)))
        names.append(name)
    m = ClipManifest(root, fps, names, color_space)
    m.save()
    return m


class TestIngest:
    def test_intervals(self, tmp_path):
        clip = ingest_clip(ClipManifest.load(write_clip(tmp_path).root))
        assert len(clip) == 4
        for i, iv in enumerate(clip.intervals):
            assert iv.start == pytest.approx(i / 240) and iv.duration == pytest.approx(1 / 240)

    def test_upsample_needs_hook(self, tmp_path):
        with pytest.raises(UnsupportedOperationError):
            ingest_clip(write_clip(tmp_path), upsample=2)

    def test_duplicate_hook(self, tmp_path):
        clip = ingest_clip(write_clip(tmp_path), duplicate_interpolator, upsample=2)
        assert len(clip) == 8
        for i in range(4):
            np.testing.assert_array_equal(clip.frames[2 * i], clip.frames[2 * i + 1])
        assert clip.intervals[1].duration == pytest.approx(1 / 480)

    def test_missing_and_mismatched(self, tmp_path):
        m = write_clip(tmp_path)
        (tmp_path / m.frames[2]).unlink()
        write_png(tmp_path / m.frames[1], np.zeros((3, 3, 3)))
        with pytest.raises(IngestionError) as err:
            ingest_clip(m)
        assert m.frames[2] in err.value.files
        (tmp_path / m.frames[1]).unlink()
        write_png(tmp_path / m.frames[2], np.zeros((3, 3, 3)))
        write_png(tmp_path / m.frames[1], np.zeros((6, 5, 3)))
        with pytest.raises(IngestionError) as err:
            ingest_clip(m)
        assert err.value.files == [m.frames[2]]

    def test_color_space_recorded(self, tmp_path):
        write_clip(tmp_path, color_space="linear")
        assert ingest_clip(ClipManifest.load(tmp_path)).color_space == "linear"

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"fps": 0, "frames": ["a", "b"]}))
        with pytest.raises(ConfigurationError):
            ClipManifest.load(tmp_path)


SMALL = CorpusConfig(height=32, width=32, present_targets=(2, 4), long_blur_captures=(16,),
                     long_blur_targets=8, ppf_captures=(2, 3))


class TestCorpus:
    def test_seed_reproducible(self):
        a = list(generate_corpus(3, 4, (0.5, 0.25, 0.25), SMALL))
        b = list(generate_corpus(3, 4, (0.5, 0.25, 0.25), SMALL))
        for x, y in zip(a, b):
            assert x.blur.tobytes() == y.blur.tobytes()
            assert x.targets.tobytes() == y.targets.tobytes()
            assert x.intervals == y.intervals

    def test_present_only(self):
        assert {p.params.mode for p in plan_corpus(0, 200, (1, 0, 0), SMALL)} == {"present"}

    def test_mix_validation(self):
        with pytest.raises(ConfigurationError):
            list(plan_corpus(0, 1, (0.5, 0.5, 0.5)))
        with pytest.raises(ConfigurationError):
            list(plan_corpus(0, 1, (1.2, -0.2, 0.0)))

    def test_proportions(self):
        modes = [p.params.mode for p in plan_corpus(11, 10_000, (0.5, 0.25, 0.25))]
        counts = {m: modes.count(m) / len(modes) for m in ("present", "long_blur", "ppf")}
        assert abs(counts["present"] - 0.5) < 0.02
        assert abs(counts["long_blur"] - 0.25) < 0.02
        assert abs(counts["ppf"] - 0.25) < 0.02

    def test_task_invariants(self):
        for task in generate_corpus(5, 6, (0.4, 0.3, 0.3), SMALL):
            ivs = task.intervals
            assert all(iv.duration > 0 for iv in ivs)
            if task.mode == "present":
                avg = average_frames(task.target_sequence())
                np.testing.assert_allclose(avg, task.blur, atol=1e-6)
            if task.mode == "ppf":
                inside = [i for i, iv in enumerate(ivs) if iv.start >= -0.5 - 1e-9 and iv.end <= 0.5 + 1e-9]
                seq = FrameSequence(task.targets[inside], [ivs[i] for i in inside])
                np.testing.assert_allclose(average_frames(seq), task.blur, atol=1e-6)

    def test_parallel_matches_serial(self):
        serial = list(generate_corpus(2, 3, (0.5, 0.25, 0.25), SMALL, workers=1))
        parallel = list(generate_corpus(2, 3, (0.5, 0.25, 0.25), SMALL, workers=2))
        for x, y in zip(serial, parallel):
            assert x.targets.tobytes() == y.targets.tobytes()


def test_task_round_trip(tmp_path):
    task = next(generate_corpus(1, 1, (0, 0, 1), SMALL))
    save_task(task, tmp_path / "t")
    back = load_task(tmp_path / "t")
    assert back.mode == "ppf" and back.intervals == task.intervals
    np.testing.assert_allclose(back.targets, task.targets, atol=0.5 / 255 + 1e-12)
    meta = json.loads((tmp_path / "t" / "task.json").read_text())
    assert meta["scene_seed"] == task.scene_seed
