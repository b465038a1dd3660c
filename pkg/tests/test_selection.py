import math
from pathlib import Path

import pytest

from icx.errors import ParameterError
from icx.ordinal_head import FitConfig
from icx.selection import (
    SelectionReport,
    Trial,
    derive_seed,
    report_to_text,
    select_components,
)
from icx.synthetic import SourceSpec, plant_dataset

from conftest import THREE_SOURCES, split

GOLDEN = Path(__file__).parent / "golden" / "selection_report.txt"
QUICK = FitConfig(epochs=200)


@pytest.fixture(scope="module")
def small_split():
    ds = plant_dataset(SourceSpec(3, THREE_SOURCES, seed=21), 1500, 16, 0.1, 4, seed=21)
    return split(ds, 1000)


@pytest.fixture(scope="module")
def full_sweep(planted64):
    return select_components(*split(planted64, 4000), n_range=(1, 10), epsilon=0.015, master_seed=0)


def frozen_report():
    return SelectionReport(
        kappa_full=0.9125,
        per_n=[Trial(1, 0.41, False), Trial(2, math.nan, True), Trial(3, 0.8970, True)],
        chosen_n=3,
        epsilon=0.015,
        satisfied=False,
    )


class TestSweep:
    def test_planted_chooses_three(self, full_sweep):
        assert full_sweep.chosen_n == 3
        assert full_sweep.satisfied
        assert [t.n for t in full_sweep.per_n] == list(range(1, 11))

    def test_chosen_is_minimal(self, full_sweep):
        r = full_sweep
        for t in r.per_n:
            if t.n < r.chosen_n:
                assert r.kappa_full - t.kappa > r.epsilon
        assert r.kappa_full - r.trial(r.chosen_n).kappa <= r.epsilon

    def test_plateau_after_three(self, full_sweep):
        k3 = full_sweep.trial(3).kappa
        assert full_sweep.trial(2).kappa <= k3 - 0.05
        for n in range(4, 11):
            assert abs(full_sweep.trial(n).kappa - k3) < 0.03

    def test_vacuous_epsilon(self, small_split):
        r = select_components(*small_split, n_range=(2, 4), epsilon=2.0, fit_cfg=QUICK)
        assert r.chosen_n == 2 and r.satisfied

    def test_range_too_small(self, small_split):
        r = select_components(*small_split, n_range=(1, 2), epsilon=0.015, fit_cfg=QUICK, master_seed=21)
        assert not r.satisfied
        best = max(r.per_n, key=lambda t: t.kappa)
        assert r.chosen_n == best.n
        assert "no n satisfied" in report_to_text(r).splitlines()[0]

    def test_same_seed_identical(self, small_split):
        a = select_components(*small_split, n_range=(1, 4), fit_cfg=QUICK, master_seed=21)
        b = select_components(*small_split, n_range=(1, 4), fit_cfg=QUICK, master_seed=21)
        assert a == b
        assert report_to_text(a) == report_to_text(b)

    def test_threads_match_sequential(self, small_split):
        seq = select_components(*small_split, n_range=(1, 4), fit_cfg=QUICK, master_seed=21, workers=0)
        par = select_components(*small_split, n_range=(1, 4), fit_cfg=QUICK, master_seed=21, workers=3)
        assert report_to_text(seq) == report_to_text(par)

    def test_trial_independent_of_range(self, small_split):
        wide = select_components(*small_split, n_range=(1, 4), fit_cfg=QUICK, master_seed=21)
        narrow = select_components(*small_split, n_range=(3, 3), fit_cfg=QUICK, master_seed=21)
        assert narrow.trial(3) == wide.trial(3)

    def test_bad_range(self, small_split):
        with pytest.raises(ParameterError):
            select_components(*small_split, n_range=(3, 2))

    def test_derive_seed(self):
        assert derive_seed(0, 1, 3) == derive_seed(0, 1, 3)
        assert len({derive_seed(0, 1, n) for n in range(50)}) == 50
        assert derive_seed(0, 1, 3) != derive_seed(1, 1, 3)


class TestReportText:
    def test_header_only(self):
        r = SelectionReport(kappa_full=0.5, per_n=[], chosen_n=1, epsilon=0.015)
        assert len(report_to_text(r).splitlines()) == 2

    def test_single_row(self):
        r = SelectionReport(kappa_full=0.5, per_n=[Trial(1, 0.49, True)], chosen_n=1, epsilon=0.015)
        lines = report_to_text(r).splitlines()
        assert len(lines) == 3
        assert lines[2].split() == ["1", "0.490000", "0.010000", "yes"]

    def test_golden(self):
        assert report_to_text(frozen_report()) == GOLDEN.read_text()
