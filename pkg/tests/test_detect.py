import numpy as np
import pytest

from coba.core import EmbeddingTable, NextTokenDistribution, Vocabulary
from coba.detect import (
    ContextDistances,
    DetectorConfig,
    admissible_mask,
    classify_candidates,
    min_context_distance,
    span_profile,
)
from coba.lm import TableLm


def vocab6():
    return Vocabulary(size=6, sos_id=0, eos_id=1)


def axis_embedding():
    """Six tokens on distinct rays: ids 0..3 on +x-ish axes, 4 on +y, 5 at 45
    degrees, so distances come out to round numbers."""
    rows = np.array(
        [
            [1.0, 0.0],
            [1.0, 0.0],
            [1.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
        ]
    )
    return EmbeddingTable(rows)


class TestDetectorConfig:
    def test_defaults(self):
        cfg = DetectorConfig()
        assert cfg.delta == 0.2
        assert cfg.phi is None
        assert cfg.exempt_special is True

    def test_validation(self):
        with pytest.raises(ValueError):
            DetectorConfig(delta=-0.1)
        with pytest.raises(ValueError):
            DetectorConfig(delta=1.1)
        with pytest.raises(ValueError):
            DetectorConfig(phi=-0.5)
        with pytest.raises(ValueError):
            DetectorConfig(phi=2.5)
        DetectorConfig(delta=0.0, phi=2.0)


class TestMinContextDistance:
    def test_token_in_context_is_zero(self):
        assert min_context_distance(2, (2, 4), axis_embedding()) == pytest.approx(0.0)

    def test_min_over_context(self):
        # emb[token] = (1,0); context at (0,1) and (1,1): min(1.0, 0.2928932)
        got = min_context_distance(2, (4, 5), axis_embedding())
        assert got == pytest.approx(0.2928932, abs=1e-6)

    def test_single_orthogonal_context(self):
        assert min_context_distance(2, (4,), axis_embedding()) == pytest.approx(1.0)

    def test_empty_context_raises(self):
        with pytest.raises(ValueError):
            min_context_distance(2, (), axis_embedding())

    def test_duplicates_do_not_matter(self):
        emb = axis_embedding()
        a = min_context_distance(2, (4, 5), emb)
        b = min_context_distance(2, (4, 4, 5, 5, 4), emb)
        assert a == b


class TestContextDistances:
    def test_matches_scalar_op(self):
        emb = axis_embedding()
        ctx = (4, 5)
        d = ContextDistances(emb, ctx)
        for tok in range(6):
            assert d.values[tok] == pytest.approx(min_context_distance(tok, ctx, emb), abs=1e-12)

    def test_empty_context_flag(self):
        d = ContextDistances(axis_embedding(), ())
        assert d.empty
        assert d.passes(0.1).all()

    def test_passes_thresholds(self):
        d = ContextDistances(axis_embedding(), (4,))
        # token 2 sits at distance 1.0 from the lone context token
        assert not d.passes(0.5)[2]
        assert d.passes(1.0)[2]


class TestClassifyCandidates:
    def dist(self, probs):
        return NextTokenDistribution(np.asarray(probs, dtype=np.float64))

    def test_boundary_prob_is_admissible(self):
        cfg = DetectorConfig(delta=0.2, phi=None)
        verdicts = classify_candidates(
            self.dist([0.0, 0.0, 0.2, 0.19, 0.31, 0.3]), (2,), cfg, axis_embedding(), vocab6()
        )
        assert verdicts[2].passes_prob
        assert not verdicts[3].passes_prob
        assert verdicts[2].admissible

    def test_boundary_dist_is_admissible(self):
        # token 5 is at exactly 1 - 1/sqrt(2) from context token 2
        boundary = 1.0 - 1.0 / np.sqrt(2.0)
        cfg = DetectorConfig(delta=0.0, phi=boundary, exempt_special=False)
        verdicts = classify_candidates(
            self.dist([0.0, 0.0, 0.0, 0.0, 0.5, 0.5]), (2,), cfg, axis_embedding(), vocab6()
        )
        assert verdicts[5].passes_dist
        assert verdicts[5].admissible
        assert not verdicts[4].passes_dist

    def test_thresholds_off_admits_everything(self):
        cfg = DetectorConfig(delta=0.0, phi=None)
        verdicts = classify_candidates(
            self.dist([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]), (2,), cfg, axis_embedding(), vocab6()
        )
        assert all(v.admissible for v in verdicts)

    def test_both_detectors_must_pass(self):
        cfg = DetectorConfig(delta=0.2, phi=0.5, exempt_special=False)
        verdicts = classify_candidates(
            self.dist([0.0, 0.0, 0.1, 0.0, 0.4, 0.5]), (2,), cfg, axis_embedding(), vocab6()
        )
        # token 4: prob 0.4 >= delta but distance 1.0 > phi
        assert verdicts[4].passes_prob and not verdicts[4].passes_dist
        assert not verdicts[4].admissible
        # token 2: distance 0 but prob below delta
        assert not verdicts[2].passes_prob and verdicts[2].passes_dist
        assert not verdicts[2].admissible

    def test_exemption_touches_only_dist(self):
        cfg = DetectorConfig(delta=0.2, phi=0.1, exempt_special=True)
        verdicts = classify_candidates(
            self.dist([0.0, 0.3, 0.0, 0.0, 0.4, 0.3]), (2,), cfg, axis_embedding(), vocab6()
        )
        # eos (special) is far from the context but exempted from similarity
        assert verdicts[1].passes_dist and verdicts[1].admissible
        # non-special token 4 at the same distance stays flagged
        assert not verdicts[4].passes_dist
        # exemption never rescues a failing probability
        strict = classify_candidates(
            self.dist([0.3, 0.1, 0.0, 0.0, 0.3, 0.3]), (2,), cfg, axis_embedding(), vocab6()
        )
        assert not strict[1].passes_prob and not strict[1].admissible

    def test_monotone_in_delta_and_phi(self):
        rng = np.random.default_rng(11)
        emb_rows = rng.normal(size=(6, 3))
        emb = EmbeddingTable(emb_rows)
        for _ in range(20):
            w = rng.random(6)
            probs = self.dist(w / w.sum())
            ctx = tuple(int(x) for x in rng.integers(2, 6, size=3))
            prev_adm = None
            for delta in (0.0, 0.1, 0.2, 0.4):
                cfg = DetectorConfig(delta=delta, phi=0.6)
                adm = {v.token for v in classify_candidates(probs, ctx, cfg, emb, vocab6()) if v.admissible}
                if prev_adm is not None:
                    assert adm <= prev_adm
                prev_adm = adm
            prev_adm = None
            for phi in (0.1, 0.5, 1.0, 2.0):
                cfg = DetectorConfig(delta=0.1, phi=phi)
                adm = {v.token for v in classify_candidates(probs, ctx, cfg, emb, vocab6()) if v.admissible}
                if prev_adm is not None:
                    assert prev_adm <= adm
                prev_adm = adm

    def test_admissible_mask_agrees(self):
        rng = np.random.default_rng(5)
        emb = EmbeddingTable(rng.normal(size=(6, 3)))
        v = vocab6()
        for _ in range(20):
            w = rng.random(6)
            probs = w / w.sum()
            ctx = tuple(int(x) for x in rng.integers(2, 6, size=4))
            cfg = DetectorConfig(delta=0.15, phi=0.7)
            distances = ContextDistances(emb, ctx)
            mask = admissible_mask(probs, cfg, distances, v.special_mask)
            verdicts = classify_candidates(
                NextTokenDistribution(probs), ctx, cfg, emb, v
            )
            assert mask.tolist() == [verdict.admissible for verdict in verdicts]


class TestSpanProfile:
    def make_lm(self):
        v = vocab6()
        default = [0.0, 0.0, 0.25, 0.25, 0.25, 0.25]
        entries = {
            (0,): [0.0, 0.0, 0.6, 0.4, 0.0, 0.0],
            (0, 2): [0.0, 0.0, 0.0, 0.1, 0.8, 0.1],
        }
        return TableLm(v, entries, default, axis_embedding())

    def test_rows_and_offsets(self):
        lm = self.make_lm()
        rows = span_profile((2, 3), (2, 4, 5), 1, lm, window=1)
        offsets = [r[0] for r in rows]
        assert offsets == [-1, 0, 1]
        # offset -1 is summary[0]=2 under prefix [sos]: prob 0.6, distance 0
        assert rows[0][1] == pytest.approx(0.6)
        assert rows[0][2] == pytest.approx(0.0)
        # offset 0 is summary[1]=4 under prefix [sos, 2]: prob 0.8, distance 1
        assert rows[1][1] == pytest.approx(0.8)
        assert rows[1][2] == pytest.approx(1.0)

    def test_clipping_at_bounds(self):
        lm = self.make_lm()
        rows = span_profile((2, 3), (4,), 0, lm, window=3)
        assert [r[0] for r in rows] == [0]

    def test_window_zero(self):
        lm = self.make_lm()
        rows = span_profile((2, 3), (2, 4), 1, lm, window=0)
        assert [r[0] for r in rows] == [0]

    def test_out_of_range_span(self):
        lm = self.make_lm()
        with pytest.raises(ValueError):
            span_profile((2, 3), (2, 4), 2, lm, window=1)
        with pytest.raises(ValueError):
            span_profile((2, 3), (2, 4), -1, lm, window=1)
