import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klfuse import cli, io
from klfuse.benchmark import SweepRow
from klfuse.expfam import diag_gaussian
from klfuse.fusion import fuse
from klfuse.synthgen import SynthConfig, analytic_posteriors, generate_benchmark

from conftest import FAMILIES, random_component


def same_bits(a, b):
    assert a.family == b.family
    for key in a.params:
        x, y = np.asarray(a.params[key]), np.asarray(b.params[key])
        assert x.shape == y.shape and x.tobytes() == y.tobytes(), key


def random_bundle_file(rng):
    family = FAMILIES[int(rng.integers(3))]
    dim = int(rng.integers(1, 4))
    bundles = [[random_component(family, dim, rng) for _ in range(int(rng.integers(1, 4)))]
               for _ in range(int(rng.integers(1, 4)))]
    weights = [rng.dirichlet(np.ones(len(b))).tolist() if rng.random() < 0.5 else None
               for b in bundles]
    return io.BundleFile.from_bundles(bundles, weights=weights)


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bundle_bits(self, tmp_path_factory, seed):
        path = tmp_path_factory.mktemp("rt") / "b.json"
        original = random_bundle_file(np.random.default_rng(seed))
        io.write_bundle_file(path, original)
        back = io.read_bundle_file(path)
        assert (back.family, back.dim) == (original.family, original.dim)
        for d0, d1 in zip(original.datasets, back.datasets, strict=True):
            assert d0.id == d1.id and d0.weights == d1.weights
            for a, b in zip(d0.components, d1.components, strict=True):
                same_bits(a, b)

    def test_extreme_values(self, tmp_path):
        c = diag_gaussian([1e-300, -1.7976931348623157e308, 0.1 + 0.2], [5e-324 + 1e-12, 1e300, 1 / 3])
        path = tmp_path / "b.json"
        io.write_bundle_file(path, io.BundleFile.from_bundles([[c]]))
        same_bits(io.read_bundle_file(path).datasets[0].components[0], c)

    def test_model_file(self, tmp_path):
        rng = np.random.default_rng(0)
        bundles = [[random_component("normal_wishart", 2, rng) for _ in range(2)] for _ in range(3)]
        result = fuse(bundles)
        path = tmp_path / "m.json"
        io.write_model_file(path, result)
        back, raw = io.read_model_file(path)
        for a, b in zip(result.global_model.components, back.global_model.components, strict=True):
            same_bits(a, b)
        assert back.objective_trace == result.objective_trace
        assert back.scale == result.scale
        for a, b in zip(result.assignments, back.assignments):
            np.testing.assert_array_equal(a, b)
        assert raw["iterations"] == result.iterations

    def test_truth_and_data(self, tmp_path):
        config = SynthConfig(G=2, D=3, J=2, n_per_dataset=10, seed=3)
        truth, locals_, data = generate_benchmark(config)
        files = [tmp_path / f"dataset_{j:03d}.csv" for j in range(2)]
        for f, X in zip(files, data):
            io.write_data_file(f, X)
            assert io.read_data_file(f).tobytes() == X.tobytes()
        io.write_truth_file(tmp_path / "truth.json", config, truth, locals_, files)
        t, locs, cfg = io.read_truth_file(tmp_path / "truth.json")
        assert t.means.tobytes() == truth.means.tobytes()
        assert t.covariances.tobytes() == truth.covariances.tobytes()
        assert [i for i, _ in locs] == ["dataset_000", "dataset_001"]
        assert locs[1][1].weights.tobytes() == locals_[1].weights.tobytes()
        assert cfg["seed"] == 3


class TestValidationOnRead:
    def write(self, tmp_path, obj):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
        return path

    def header(self, **datasets):
        return {"version": 1, "family": "diag_gaussian", "dim": 1, **datasets}

    @pytest.mark.parametrize("obj, message", [
        ("{not json", "invalid JSON"),
        ({"version": 2, "family": "diag_gaussian", "dim": 1}, "version"),
        ({"version": 1, "family": "poisson", "dim": 1}, "family"),
        ({"version": 1, "family": "diag_gaussian", "dim": 1,
          "datasets": [{"id": "a", "components": [{"mean": [0.0], "variance": [-1.0]}]}]},
         "component 0"),
        ({"version": 1, "family": "diag_gaussian", "dim": 2,
          "datasets": [{"id": "a", "components": [{"mean": [0.0], "variance": [1.0]}]}]},
         "dimension"),
        ({"version": 1, "family": "diag_gaussian", "dim": 1,
          "datasets": [{"id": "a", "components": [{"mean": [0.0], "variance": [1.0]}],
                        "weights": [0.5, 0.5]}]}, "weights"),
        ({"version": 1, "family": "diag_gaussian", "dim": 1, "datasets": []}, "no datasets"),
        ({"version": 1, "family": "normal_wishart", "dim": 2,
          "datasets": [{"id": "a", "components": [
              {"m": [0, 0], "kappa": 1, "W": [[1, 2], [2, 1]], "nu": 3}]}]}, "component 0"),
    ])
    def test_rejects(self, tmp_path, obj, message):
        path = self.write(tmp_path, obj)
        with pytest.raises(io.FileFormatError, match=message) as info:
            io.read_bundle_file(path)
        assert str(path) in str(info.value)

    def test_bad_data_file(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("1,2\n3,abc\n")
        with pytest.raises(io.FileFormatError):
            io.read_data_file(path)


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def synth_dir(tmp_path, capsys):
    out = tmp_path / "synth"
    code, _, _ = run(["synth", "--G", 3, "--D", 2, "--J", 4, "--n", 150, "--sep", 3,
                      "--noise", 0.1, "--seed", 2, "--out", out], capsys)
    assert code == 0
    return out


class TestCli:
    def test_synth_example(self, tmp_path, capsys):
        args = ["synth", "--G", 5, "--D", 10, "--J", 50, "--sep", 0.5, "--noise", 0.5, "--seed", 1]
        assert run(args + ["--out", tmp_path / "a"], capsys)[0] == 0
        assert run(args + ["--out", tmp_path / "b"], capsys)[0] == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(files) == 51 and "truth.json" in files
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_single_dataset(self, tmp_path, capsys):
        assert run(["synth", "--J", 1, "--n", 5, "--out", tmp_path], capsys)[0] == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["dataset_000.csv", "truth.json"]

    def test_invalid_flags(self, tmp_path, capsys):
        code, _, err = run(["synth", "--G", 0], capsys)
        assert code != 0 and len(err.strip().splitlines()) == 1
        code, _, err = run(["synth", "--D", 3, "--wishart-df", 1.5, "--out", tmp_path], capsys)
        assert code == 1 and "wishart_df" in err and len(err.strip().splitlines()) == 1

    def test_pipeline(self, synth_dir, tmp_path, capsys):
        data = sorted(synth_dir.glob("dataset_*.csv"))
        bundle, model, rows = tmp_path / "b.json", tmp_path / "m.json", tmp_path / "r.csv"
        assert run(["local-vi", *data, "--truth", synth_dir / "truth.json", "--out", bundle],
                   capsys)[0] == 0
        assert len(io.read_bundle_file(bundle).datasets) == 4
        assert run(["fuse", bundle, "--out", model], capsys)[0] == 0
        result, raw = io.read_model_file(model)
        assert np.all(np.diff(result.objective_trace) <= 1e-9)
        assert raw["lambda"] == 0.1 and raw["wall_seconds"] >= 0
        code, out, _ = run(["eval", model, synth_dir / "truth.json", "--csv", rows], capsys)
        assert code == 0
        keys = [line.split()[0] for line in out.strip().splitlines()]
        assert keys == ["hausdorff", "size_error", "fused_G"]
        with open(rows) as fh:
            reader = csv.DictReader(fh)
            assert tuple(reader.fieldnames) == SweepRow.FIELDS
            (row,) = list(reader)
        assert row["seed"] == "2" and row["method"] == "kl_fusion"

    def test_local_vi_errors(self, tmp_path, capsys):
        code, _, err = run(["local-vi", "--K", 2], capsys)
        assert code == 2 and len(err.strip().splitlines()) == 1
        missing = tmp_path / "missing.csv"
        code, _, err = run(["local-vi", missing, "--K", 2, "--out", tmp_path / "b.json"], capsys)
        assert code == 1 and str(missing) in err and len(err.strip().splitlines()) == 1
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\nx,y\n")
        code, _, err = run(["local-vi", bad, "--K", 2, "--out", tmp_path / "b.json"], capsys)
        assert code == 1 and str(bad) in err

    def test_local_vi_needs_k(self, synth_dir, tmp_path, capsys):
        code, _, err = run(["local-vi", synth_dir / "dataset_000.csv", "--out", tmp_path / "b"],
                           capsys)
        assert code == 1 and "--K" in err

    def test_fuse_duplicated_datasets(self, tmp_path, capsys):
        rng = np.random.default_rng(4)
        comps = [random_component("normal_wishart", 2, rng) for _ in range(3)]
        comps[1] = type(comps[1])(comps[1].family, {**comps[1].params,
                                                    "m": comps[1]["m"] + 25.0})
        comps[2] = type(comps[2])(comps[2].family, {**comps[2].params,
                                                    "m": comps[2]["m"] - 25.0})
        path = tmp_path / "b.json"
        io.write_bundle_file(path, io.BundleFile.from_bundles([comps] * 4))
        assert run(["fuse", path, "--out", tmp_path / "m.json"], capsys)[0] == 0
        result, _ = io.read_model_file(tmp_path / "m.json")
        assert len(result.global_model) == 3

    def test_fuse_homogeneous_mismatch(self, tmp_path, capsys):
        c = diag_gaussian([0.0], [1.0])
        path = tmp_path / "b.json"
        io.write_bundle_file(path, io.BundleFile.from_bundles([[c], [c, c]]))
        code, _, err = run(["fuse", path, "--mode", "homogeneous"], capsys)
        assert code == 1 and "equal component counts" in err

    def test_eval_examples(self, synth_dir, tmp_path, capsys):
        truth, _, _ = io.read_truth_file(synth_dir / "truth.json")
        comps = analytic_posteriors(truth.means, truth.covariances)
        for kept, size_error in ((comps, 0), (comps[:-1], 1)):
            result = fuse([kept])
            io.write_model_file(tmp_path / "m.json", result)
            code, out, _ = run(["eval", tmp_path / "m.json", synth_dir / "truth.json"], capsys)
            values = dict(line.split() for line in out.strip().splitlines())
            assert code == 0 and int(values["size_error"]) == size_error
            if size_error == 0:
                assert float(values["hausdorff"]) < 1e-9

    def test_eval_dimension_mismatch(self, synth_dir, tmp_path, capsys):
        io.write_model_file(tmp_path / "m.json", fuse([[diag_gaussian([0.0] * 5, [1.0] * 5)]]))
        code, _, err = run(["eval", tmp_path / "m.json", synth_dir / "truth.json"], capsys)
        assert code == 1 and "dimension mismatch" in err

    def test_sweep_rows_and_determinism(self, tmp_path, capsys):
        common = ["--seeds", 10, "--G", 2, "--D", 2, "--J", 3, "--n", 40]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(["sweep", "--sep-grid", "0.1,0.5,2.0", "--noise", 0.5, *common, "--out", a],
                   capsys)[0] == 0
        assert run(["sweep", "--sep-grid", "0.1,0.5,2.0", "--noise", 0.5, *common, "--jobs", 3,
                    "--out", b], capsys)[0] == 0
        rows_a, rows_b = [list(csv.DictReader(open(p))) for p in (a, b)]
        assert len(rows_a) == 30
        assert [float(r["separation"]) for r in rows_a[::10]] == [0.1, 0.5, 2.0]
        strip = [[{k: v for k, v in r.items() if k != "wall_seconds"} for r in rows]
                 for rows in (rows_a, rows_b)]
        assert strip[0] == strip[1]

    def test_noise_sweep(self, tmp_path, capsys):
        out = tmp_path / "n.csv"
        assert run(["sweep", "--sep", 0.5, "--noise-grid", "0.1,0.5,2.0", "--seeds", 10,
                    "--G", 2, "--D", 2, "--J", 3, "--n", 40, "--out", out], capsys)[0] == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 30 and {r["separation"] for r in rows} == {"0.5"}

    def test_sweep_reports_failing_cell(self, tmp_path, capsys, monkeypatch):
        def boom(synth, method):
            if synth.seed == 1:
                raise ValueError("synthetic failure")
            return SweepRow(synth.seed, synth.separation, synth.hetero_noise, method,
                            0.0, 0, 1, 0.0)

        monkeypatch.setattr(cli, "run_cell", boom)
        code, _, err = run(["sweep", "--sep", 0.5, "--seeds", 3, "--out", tmp_path / "s.csv"],
                           capsys)
        assert code == 1
        assert "seed=1" in err and "separation=0.5" in err and "synthetic failure" in err
        assert len(err.strip().splitlines()) == 1

    def test_seed_environment_fallback(self, monkeypatch):
        monkeypatch.setenv("KLFUSE_SEED", "42")
        assert cli.build_parser().parse_args(["fuse", "b.json"]).seed == 42
        monkeypatch.delenv("KLFUSE_SEED")
        assert cli.build_parser().parse_args(["fuse", "b.json"]).seed == 0
