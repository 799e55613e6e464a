import filecmp

import numpy as np
import pytest

from naq import annotations as ann
from naq import localizer as loc
from naq import synthworld as sw


def small_cfg(**overrides):
    base = dict(
        n_videos=24,
        steps_per_video=128,
        n_objects=60,
        object_zipf_exponent=1.2,
        max_train_queries=None,
        seed=3,
    )
    base.update(overrides)
    return sw.WorldConfig(**base)


class TestRendering:
    def make_event(self, verb="picks_up", obj="knife", place="kitchen"):
        return sw.Event(verb, obj, place, ann.TemporalWindow(4.0, 7.0))

    def test_narration_template_fill(self):
        assert sw.render_narration(self.make_event()) == "C picks_up the knife in the kitchen"
        assert (
            sw.render_narration(self.make_event("opens", "drawer", "garage"))
            == "C opens the drawer in the garage"
        )

    def test_underscore_token_preserved(self):
        assert "picks_up" in sw.render_narration(self.make_event())

    def test_query_template_fill(self):
        sample = sw.render_query(self.make_event(), "Where did I put X?")
        assert sample.query == "Where did I put the knife?"
        assert sample.window == ann.TemporalWindow(4.0, 7.0)
        assert sample.template == "Where did I put X?"
        assert sample.object == "knife"

    def test_pluralization(self):
        sample = sw.render_query(self.make_event(obj="funnel"), "How many X's?")
        assert sample.query == "How many funnels?"
        assert sw.pluralize("box") == "boxes"

    def test_unknown_template_rejected(self):
        with pytest.raises(ValueError, match="unknown template"):
            sw.render_query(self.make_event(), "Why did I do Y?")

    def test_missing_slot_rejected(self):
        event = sw.Event(None, "knife", "kitchen", ann.TemporalWindow(0.0, 1.0))
        with pytest.raises(ValueError, match="verb"):
            sw.render_query(event, "What X did I Y?")

    def test_all_templates_renderable(self):
        event = self.make_event()
        for template in sw.QUERY_TEMPLATES:
            sample = sw.render_query(event, template)
            assert sample.query.endswith("?")


class TestGenerateWorld:
    def test_deterministic_files(self, tmp_path):
        cfg = small_cfg()
        for name in ("a", "b"):
            sw.save_world(sw.generate_world(cfg), tmp_path / name)
        match, mismatch, errors = filecmp.cmpfiles(
            tmp_path / "a",
            tmp_path / "b",
            ["videos.jsonl", "narrations.jsonl", "nlq.jsonl", "world_manifest.json"],
            shallow=False,
        )
        assert not mismatch and not errors
        feats_a = sorted((tmp_path / "a" / "features").iterdir())
        feats_b = sorted((tmp_path / "b" / "features").iterdir())
        assert [p.name for p in feats_a] == [p.name for p in feats_b]
        for pa, pb in zip(feats_a, feats_b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_response_width_ratio_near_two_percent(self):
        corpus = sw.generate_world(small_cfg())
        widths = [s.window.width for s in corpus.nlq]
        ratio = np.mean(widths) / corpus.config.steps_per_video
        assert 0.015 <= ratio <= 0.027

    def test_narration_density_follows_period(self):
        cfg = small_cfg(narration_period_steps=4.0, n_verbs=40)
        corpus = sw.generate_world(cfg)
        per_video = len(corpus.narrations) / cfg.n_videos
        per_minute = per_video / (cfg.steps_per_video / 60.0)
        assert 13.5 <= per_minute <= 16.0

    def test_narrations_sit_at_event_midpoints(self):
        corpus = sw.generate_world(small_cfg())
        for video in corpus.videos[:5]:
            events = corpus.events[video.video_uid]
            assert len(video.narrations) == len(events)
            for narration, event in zip(video.narrations, events):
                assert narration.timestamp_sec == pytest.approx(event.window.center)

    def test_events_non_overlapping_and_ordered(self):
        corpus = sw.generate_world(small_cfg())
        for events in corpus.events.values():
            for a, b in zip(events, events[1:]):
                assert a.window.end_sec <= b.window.start_sec

    def test_every_query_window_is_an_event_window(self):
        corpus = sw.generate_world(small_cfg())
        for sample in corpus.nlq:
            windows = [e.window for e in corpus.events[sample.video_uid]]
            assert sample.window in windows

    def test_split_disjointness_and_fractions(self):
        corpus = sw.generate_world(small_cfg(n_videos=40))
        seen: dict[str, str] = {}
        for video in corpus.videos:
            assert video.split in ann.SPLITS
            assert video.video_uid not in seen
            seen[video.video_uid] = video.split
        counts = {s: sum(1 for v in corpus.videos if v.split == s) for s in ann.SPLITS}
        assert counts["train"] == 30 and counts["val"] == 6 and counts["test"] == 4
        for sample in corpus.nlq:
            assert sample.split == seen[sample.video_uid]

    def test_train_query_cap(self):
        corpus = sw.generate_world(small_cfg(max_train_queries=10))
        assert len(corpus.split_nlq("train")) == 10
        assert len(corpus.split_nlq("val")) > 0

    def test_object_counts_match_train_queries(self):
        corpus = sw.generate_world(small_cfg())
        train = corpus.split_nlq("train")
        with_object = [s for s in train if s.object is not None]
        assert sum(corpus.object_counts.values()) == len(with_object)

    def test_lexical_overlap_with_source_narration(self):
        corpus = sw.generate_world(small_cfg())
        vocab = loc.Vocabulary.from_texts(
            [n.text for n in corpus.narrations] + [s.query for s in corpus.nlq]
        )
        narrations_by_video: dict[str, list] = {}
        for n in corpus.narrations:
            narrations_by_video.setdefault(n.video_uid, []).append(n)
        for sample in corpus.nlq:
            inside = [
                n
                for n in narrations_by_video[sample.video_uid]
                if sample.window.start_sec <= n.timestamp_sec <= sample.window.end_sec
            ]
            assert inside, "every query window contains its event's narration"
            query_tokens = set(vocab.encode(sample.query))
            assert any(query_tokens & set(vocab.encode(n.text)) for n in inside)

    def test_vocab_too_small_rejected(self):
        with pytest.raises(ValueError, match="vocab too small"):
            sw.generate_world(small_cfg(n_objects=5))

    def test_features_shape_and_phase_ramp(self):
        cfg = small_cfg(n_videos=2, noise_scale=0.0)
        corpus = sw.generate_world(cfg)
        video = corpus.videos[0]
        assert video.features.shape == (cfg.steps_per_video, cfg.feature_dim)
        assert video.features.dtype == np.float32
        content_dim = cfg.feature_dim - cfg.phase_dims
        event = corpus.events[video.video_uid][0]
        a, w = int(event.window.start_sec), int(event.window.width)
        ramp_down = video.features[a : a + w, content_dim]
        ramp_up = video.features[a : a + w, content_dim + 1]
        np.testing.assert_allclose(ramp_down + ramp_up, np.ones(w), atol=1e-6)
        assert ramp_down[0] > ramp_down[-1]
        # background steps carry no content and no phase
        before = max(0, a - 1)
        if before < a:
            np.testing.assert_allclose(video.features[before], 0.0, atol=1e-6)

    def test_noise_scale_controls_background_norm(self):
        cfg = small_cfg(n_videos=2, noise_scale=0.2)
        corpus = sw.generate_world(cfg)
        video = corpus.videos[0]
        events = corpus.events[video.video_uid]
        in_event = np.zeros(cfg.steps_per_video, dtype=bool)
        for e in events:
            in_event[int(e.window.start_sec) : int(e.window.end_sec)] = True
        background = video.features[~in_event]
        norms = np.linalg.norm(background.astype(np.float64), axis=1)
        assert 0.1 < norms.mean() < 0.3

    def test_beta_close_to_period(self):
        corpus = sw.generate_world(small_cfg())
        betas = [v.beta_sec for v in corpus.videos if v.beta_sec is not None]
        assert np.mean(betas) == pytest.approx(
            corpus.config.narration_period_steps, rel=0.1
        )


class TestLongTail:
    def test_count_of_counts_monotone_decreasing(self):
        cfg = sw.WorldConfig(
            n_videos=150,
            steps_per_video=128,
            n_objects=1000,
            n_verbs=30,
            object_zipf_exponent=1.0,
            query_spacing_steps=8.0,
            eval_query_spacing_steps=8.0,
            max_train_queries=None,
            seed=5,
        )
        corpus = sw.generate_world(cfg)
        counts = list(corpus.object_counts.values())
        assert len(counts) > 50
        histogram = {}
        for c in counts:
            histogram[c] = histogram.get(c, 0) + 1
        for k in (1, 2, 3, 4):
            assert histogram.get(k, 0) >= histogram.get(k + 1, 0)


class TestWorldFilesRoundTrip:
    def test_reload_through_annotations(self, tmp_path):
        corpus = sw.generate_world(small_cfg(n_videos=6))
        sw.save_world(corpus, tmp_path)
        videos = ann.parse_videos(ann.read_jsonl(tmp_path / "videos.jsonl"))
        assert len(videos) == 6
        narrs = ann.parse_narrations(ann.read_jsonl(tmp_path / "narrations.jsonl"))
        assert len(narrs) == len(corpus.narrations)
        nlq = ann.parse_nlq(
            ann.read_jsonl(tmp_path / "nlq.jsonl"),
            durations={v.video_uid: v.duration_sec for v in videos},
        )
        assert nlq == corpus.nlq
        feats = ann.read_features(tmp_path / "features" / f"{videos[0].video_uid}.naqf")
        np.testing.assert_array_equal(feats, corpus.videos[0].features)


class TestConfigValidation:
    def test_split_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            sw.WorldConfig(split_fractions=(0.8, 0.3, 0.1))

    def test_period_must_exceed_width(self):
        with pytest.raises(ValueError, match="narration_period_steps"):
            sw.WorldConfig(narration_period_steps=3.0, response_width_steps_mean=2.56)

    def test_unknown_template_rejected(self):
        with pytest.raises(ValueError, match="unknown query templates"):
            sw.WorldConfig(query_templates=("Where is my mind?",))
