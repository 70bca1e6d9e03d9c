"""CSV ingestion: schema validation, diagnostics, standardization, and the
write/read round trip."""

import numpy as np
import pytest

from guildtree.ingest import ingest, write_community_csv
from guildtree.simulate import SimSpec, simulate


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


SIX_SPECIES = [f"sp{i}" for i in range(1, 7)]


def six_species_file(tmp_path, n=8):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(n):
        y = (rng.random(6) < 0.5).astype(int)
        rows.append([*y, round(float(rng.normal()), 6)])
    return write_csv(tmp_path / "six.csv", [*SIX_SPECIES, "depth"], rows)


class TestSchema:
    def test_six_species_single_predictor(self, tmp_path):
        path = six_species_file(tmp_path)
        data, record = ingest(path, SIX_SPECIES, ["depth"], "probit")
        assert data.n_species == 6
        assert data.n_predictors == 1
        assert data.n_sites == 8
        assert data.n_periods == 1
        assert data.species_names == tuple(SIX_SPECIES)
        assert record.applied

    def test_fifteen_species_three_predictors_three_periods(self, tmp_path):
        rng = np.random.default_rng(1)
        species = [f"s{i:02d}" for i in range(15)]
        predictors = ["temperature", "speed", "depth"]
        rows = []
        for i in range(12):
            y = (rng.random(15) < 0.4).astype(int)
            x = np.round(rng.normal(size=3), 5)
            rows.append([*y, *x, i % 3 + 1])
        path = write_csv(
            tmp_path / "big.csv", [*species, *predictors, "period"], rows
        )
        data, _ = ingest(path, species, predictors, "probit")
        assert data.n_species == 15
        assert data.n_predictors == 3
        assert data.n_periods == 3
        assert data.period_index.tolist() == [i % 3 + 1 for i in range(12)]

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            ingest(path, ["a"], ["x"], "probit")

    def test_header_only_rejected(self, tmp_path):
        path = write_csv(tmp_path / "hdr.csv", ["a", "x"], [])
        with pytest.raises(ValueError, match="no data rows"):
            ingest(path, ["a"], ["x"], "probit")

    def test_unknown_column_named(self, tmp_path):
        path = write_csv(tmp_path / "u.csv", ["a", "x", "latitude"], [[1, 0.2, 3.0]])
        with pytest.raises(ValueError, match=r"unknown columns \['latitude'\]"):
            ingest(path, ["a"], ["x"], "probit")

    def test_missing_column_named(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", ["a"], [[1]])
        with pytest.raises(ValueError, match=r"missing columns \['x'\]"):
            ingest(path, ["a"], ["x"], "probit")


class TestValueDiagnostics:
    def test_non_numeric_cell_located(self, tmp_path):
        path = write_csv(
            tmp_path / "v.csv", ["a", "x"], [[1, 0.5], ["high", 0.7]]
        )
        with pytest.raises(ValueError, match=r"line 3, column 'a'.*'high'"):
            ingest(path, ["a"], ["x"], "probit")

    def test_nonbinary_presence_located(self, tmp_path):
        path = write_csv(tmp_path / "b.csv", ["a", "x"], [[1, 0.5], [2, 0.7]])
        with pytest.raises(ValueError, match="line 3, column 'a'.*0 or 1"):
            ingest(path, ["a"], ["x"], "probit")

    def test_negative_count_located(self, tmp_path):
        path = write_csv(tmp_path / "n.csv", ["a", "x"], [[3, 0.5], [-1, 0.7]])
        with pytest.raises(ValueError, match="line 3.*nonnegative integer"):
            ingest(path, ["a"], ["x"], "zip")

    def test_fractional_count_located(self, tmp_path):
        path = write_csv(tmp_path / "f.csv", ["a", "x"], [[1.5, 0.5]])
        with pytest.raises(ValueError, match="line 2.*nonnegative integer"):
            ingest(path, ["a"], ["x"], "zip")

    def test_bad_period_label(self, tmp_path):
        path = write_csv(
            tmp_path / "p.csv", ["a", "x", "period"], [[1, 0.5, 0]]
        )
        with pytest.raises(ValueError, match="period.*positive integer"):
            ingest(path, ["a"], ["x"], "probit")

    def test_bad_holdout_flag(self, tmp_path):
        path = write_csv(
            tmp_path / "h.csv", ["a", "x", "holdout"], [[1, 0.5, 2]]
        )
        with pytest.raises(ValueError, match="holdout.*0 or 1"):
            ingest(path, ["a"], ["x"], "probit")


class TestStandardization:
    def test_record_and_transform(self, tmp_path):
        x = np.array([1.0, 2.0, 3.0, 6.0])
        rows = [[int(i % 2), float(v)] for i, v in enumerate(x)]
        path = write_csv(tmp_path / "s.csv", ["a", "x"], rows)
        data, record = ingest(path, ["a"], ["x"], "probit")
        assert record.applied
        assert record.center[0] == pytest.approx(x.mean())
        assert record.scale[0] == pytest.approx(x.std())
        np.testing.assert_allclose(
            data.predictors[:, 0], (x - x.mean()) / x.std(), rtol=1e-12
        )

    def test_disabled_keeps_raw_values(self, tmp_path):
        path = write_csv(tmp_path / "r.csv", ["a", "x"], [[1, 5.5], [0, 7.25]])
        data, record = ingest(path, ["a"], ["x"], "probit", standardize=False)
        assert not record.applied
        assert record.center == (0.0,) and record.scale == (1.0,)
        assert data.predictors[:, 0].tolist() == [5.5, 7.25]

    def test_constant_predictor_rejected(self, tmp_path):
        path = write_csv(tmp_path / "c.csv", ["a", "x"], [[1, 2.0], [0, 2.0]])
        with pytest.raises(ValueError, match="constant"):
            ingest(path, ["a"], ["x"], "probit")


class TestCombination:
    def test_files_concatenate_in_order(self, tmp_path):
        p1 = write_csv(tmp_path / "one.csv", ["a", "x"], [[1, 0.1], [0, 0.2]])
        p2 = write_csv(tmp_path / "two.csv", ["a", "x"], [[0, 0.3]])
        data, _ = ingest([p1, p2], ["a"], ["x"], "probit", standardize=False)
        assert data.responses[:, 0].tolist() == [1.0, 0.0, 0.0]
        assert data.predictors[:, 0].tolist() == [0.1, 0.2, 0.3]

    def test_holdout_file_fully_flagged(self, tmp_path):
        fit = write_csv(tmp_path / "fit.csv", ["a", "x"], [[1, 0.1], [0, 0.2]])
        held = write_csv(tmp_path / "held.csv", ["a", "x"], [[1, 0.3]])
        data, _ = ingest(
            [fit], ["a"], ["x"], "probit", holdout_paths=[held]
        )
        assert data.holdout_mask.tolist() == [False, False, True]
        assert data.holdout_subset().n_sites == 1

    def test_holdout_column_respected(self, tmp_path):
        path = write_csv(
            tmp_path / "mix.csv", ["a", "x", "holdout"],
            [[1, 0.1, 0], [0, 0.2, 1], [1, 0.3, 0]],
        )
        data, _ = ingest(path, ["a"], ["x"], "probit")
        assert data.holdout_mask.tolist() == [False, True, False]

    def test_no_holdout_leaves_mask_none(self, tmp_path):
        path = write_csv(tmp_path / "plain.csv", ["a", "x"], [[1, 0.1], [0, 0.5]])
        data, _ = ingest(path, ["a"], ["x"], "probit")
        assert data.holdout_mask is None

    def test_inconsistent_period_presence_rejected(self, tmp_path):
        p1 = write_csv(tmp_path / "w.csv", ["a", "x", "period"], [[1, 0.1, 1]])
        p2 = write_csv(tmp_path / "wo.csv", ["a", "x"], [[0, 0.2]])
        with pytest.raises(ValueError, match="every file or in none"):
            ingest([p1, p2], ["a"], ["x"], "probit")


class TestRoundTrip:
    @pytest.mark.parametrize("family", ["probit", "zip"])
    def test_write_then_read_is_exact(self, tmp_path, family):
        spec = SimSpec(
            n_sites=40,
            n_species=3,
            n_predictors=2,
            family=family,
            groups=(((0, 1), (2,)),) * 2,
            alpha=(0.2, -0.1, 0.4),
            gammas=(np.array([[0.5, -0.3], [0.8, 0.1]]),) * 2,
            phi=0.2 if family == "zip" else 0.0,
            holdout_fraction=0.25,
        )
        sim = simulate(spec, seed=17)
        path = tmp_path / "round.csv"
        write_community_csv(path, sim.data)
        data, record = ingest(
            path,
            sim.data.species_names,
            sim.data.predictor_names,
            family,
            standardize=False,
        )
        assert np.array_equal(data.responses, sim.data.responses)
        assert np.array_equal(data.predictors, sim.data.predictors)
        assert np.array_equal(data.period_index, sim.data.period_index)
        assert np.array_equal(data.holdout_mask, sim.data.holdout_mask)
        assert not record.applied
