import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from neurosym.cli import EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING, git_blob_hash, main
from neurosym.data import Dataset, SyntheticConfig, generate_synthetic, read_splits, write_splits
from neurosym.dsl import FeatureSchema

TINY_INI = """
[data]
n_train = 120
n_val = 40
n_test = 80
seed = {seed}

[vae]
epochs = 1
z_dim = 2
h_dim = 4
rnn_dim = 4
adv_dim = 3
batch_size = 60

[synthesis]
neural_epochs = 1
symbolic_epochs = 1

[run]
k = 2
seeds = 0, 1
"""


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI.format(seed=4))
    return path


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, tiny_cfg):
    out = tmp_path_factory.mktemp("data")
    res = invoke("gen-data", "--config", tiny_cfg, "--out", out)
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, tiny_cfg):
    out = tmp_path_factory.mktemp("run")
    res = invoke("run", "--config", tiny_cfg, "--out", out)
    assert res.exit_code == 0, res.output
    return out


# gen-data ---------------------------------------------------------------------
def test_gen_data_writes_splits_and_manifest(data_dir):
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert sorted(manifest["splits"]) == ["test", "train", "val"]
    assert [manifest["splits"][s]["n"] for s in ("train", "val", "test")] == [120, 40, 80]
    assert manifest["config"]["seed"] == 4
    sp = read_splits(data_dir)
    ref = generate_synthetic(SyntheticConfig(n_train=120, n_val=40, n_test=80, seed=4))
    np.testing.assert_allclose(sp.test.features, ref.test.features, rtol=0, atol=1e-12)


def test_gen_data_is_bitwise_reproducible(tmp_path, tiny_cfg, data_dir):
    assert invoke("gen-data", "--config", tiny_cfg, "--out", tmp_path).exit_code == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json", "labels.json"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()
    assert invoke("gen-data", "--config", tiny_cfg, "--seed", 9, "--out", tmp_path / "b").exit_code == 0
    assert (tmp_path / "b" / "test.jsonl").read_bytes() != (data_dir / "test.jsonl").read_bytes()


# run ----------------------------------------------------------------------------
def test_run_directory_layout(run_dir):
    for seed in (0, 1):
        d = run_dir / f"seed_{seed}"
        assert sorted(p.name for p in d.glob("program_*.txt")) == ["program_0.txt", "program_1.txt"]
        for name in ("model.npz", "synthesis_log.json", "history.csv", "metrics.json",
                     "program_features.json"):
            assert (d / name).is_file(), name
    inputs = json.loads((run_dir / "inputs.json").read_text())
    assert inputs["config"] == git_blob_hash((run_dir / "config.ini").read_bytes())
    assert len(inputs["content_hash"]) == 40


def test_summary_median_matches_seed_files(run_dir):
    summary = json.loads((run_dir / "summary.json").read_text())
    per_seed = [json.loads((run_dir / f"seed_{s}" / "metrics.json").read_text()) for s in (0, 1)]
    for key in ("purity", "nmi", "ri"):
        assert summary["median"][key] == pytest.approx(np.median([m[key] for m in per_seed]),
                                                       abs=1e-15)
    assert summary["n_failed"] == 0


def test_rerun_reproduces_metrics_and_logs(tmp_path, tiny_cfg, run_dir):
    res = invoke("run", "--config", tiny_cfg, "--seed", 1, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    for name in ("metrics.json", "synthesis_log.json", "program_0.txt", "program_1.txt"):
        assert (tmp_path / "seed_1" / name).read_bytes() == (run_dir / "seed_1" / name).read_bytes()


def test_parallel_seeds_match_sequential(tmp_path, tiny_cfg, run_dir):
    res = invoke("run", "--config", tiny_cfg, "--parallel-seeds", "--out", tmp_path)
    assert res.exit_code == 0, res.output
    assert (json.loads((tmp_path / "summary.json").read_text())
            == json.loads((run_dir / "summary.json").read_text()))


def test_k_zero_trains_a_plain_vae(tmp_path, tiny_cfg):
    res = invoke("run", "--config", tiny_cfg, "--seed", 0, "--k", 0, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    metrics = json.loads((tmp_path / "seed_0" / "metrics.json").read_text())
    assert metrics["k_clusters"] == 1
    assert list((tmp_path / "seed_0").glob("program_*.txt")) == []


def test_training_failure_is_recorded_per_seed(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(TINY_INI.format(seed=0))
    res = invoke("run", "--config", cfg, "--k", 3, "--out", tmp_path / "r")
    # a two-function library at depth 2 has only two distinct programs
    assert res.exit_code == EXIT_TRAINING
    assert (tmp_path / "r" / "seed_0" / "error.txt").is_file()
    assert json.loads((tmp_path / "r" / "summary.json").read_text())["n_failed"] == 2


# eval ---------------------------------------------------------------------------
def test_random_baseline_purity(data_dir):
    res = invoke("eval", "--data", data_dir, "--random", 4, "--seed", 1)
    rep = json.loads(res.output)
    # Monte Carlo oracle: purity of uniform 4-way assignments on the same labels
    labels = read_splits(data_dir).test.labels
    rng = np.random.default_rng(0)
    sims = [sum(np.bincount(labels[ids == c], minlength=4).max() for c in range(4)) / len(labels)
            for ids in rng.integers(0, 4, size=(2000, len(labels)))]
    assert abs(rep["purity"] - np.mean(sims)) <= 4 * np.std(sims)
    assert rep["k_clusters"] == 4 and rep["n"] == 80


def _oracle_programs(tmp_path):
    d = tmp_path / "oracle"
    d.mkdir()
    (d / "program_0.txt").write_text("1[> 10.00] map_avg(fun x_t. affine[final_x: 1.00; 0.00](x_t))\n")
    (d / "program_1.txt").write_text("1[> 10.00] map_avg(fun x_t. affine[final_y: 1.00; 0.00](x_t))\n")
    (d / "program_features.json").write_text(json.dumps({
        "raw": FeatureSchema(("x", "y"), 25).to_dict(), "derived": ["final(x)", "final(y)"]}))
    return d


def test_oracle_programs_score_perfectly_on_their_own_labels(tmp_path, data_dir):
    sp = read_splits(data_dir)
    te = sp.test
    ids = (te.features[:, -1, 0] > 10) + 2 * (te.features[:, -1, 1] > 10)
    relabeled = te.__class__(te.features, te.schema, labels=ids.astype(int))
    write_splits(tmp_path / "d", type(sp)(sp.train, sp.val, relabeled))
    res = invoke("eval", "--programs", _oracle_programs(tmp_path), "--data", tmp_path / "d",
                 "--out", tmp_path / "m.json")
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "m.json").read_text())["purity"] == 1.0


def test_oracle_programs_on_true_labels(tmp_path, data_dir):
    res = invoke("eval", "--programs", _oracle_programs(tmp_path), "--data", data_dir)
    assert json.loads(res.output)["purity"] >= 0.9


def test_eval_rejects_schema_mismatch(tmp_path, data_dir):
    sp = read_splits(data_dir)
    other = FeatureSchema(("u", "v"), 25)
    renamed = [Dataset(d.features, other, labels=d.labels) for _, d in sp.items()]
    write_splits(tmp_path / "d", type(sp)(*renamed))
    res = invoke("eval", "--programs", _oracle_programs(tmp_path), "--data", tmp_path / "d")
    assert res.exit_code == EXIT_DATA and "schema" in res.output


def test_eval_needs_programs_or_random(data_dir):
    assert invoke("eval", "--data", data_dir).exit_code == 2


# show-program ---------------------------------------------------------------------
def test_show_program_golden(tmp_path):
    d = _oracle_programs(tmp_path)
    res = invoke("show-program", d / "program_1.txt")
    assert res.exit_code == 0
    assert res.output == (
        "1[> 10.00] map_avg(fun x_t. affine[final_y: 1.00; 0.00](x_t))\n"
        "\n"
        "channels:\n"
        "  final_y: last value of y, repeated over time\n"
        "output: 1 when the expression exceeds the bracketed threshold\n")


def test_show_program_round_trips_run_output(run_dir):
    path = run_dir / "seed_0" / "program_0.txt"
    res = invoke("show-program", path)
    assert res.output.splitlines()[0] == path.read_text().strip()


def test_show_program_errors(tmp_path):
    assert invoke("show-program", tmp_path / "missing.txt").exit_code == EXIT_DATA
    d = _oracle_programs(tmp_path)
    (d / "bad.txt").write_text("1[> 1.00] map_avg(fun x_t. affine[speed: 1.00; 0.00](x_t))")
    res = invoke("show-program", d / "bad.txt")
    assert res.exit_code == EXIT_DATA and "speed" in res.output


# export-latents ---------------------------------------------------------------------
def test_export_latents(tmp_path, run_dir, data_dir):
    out = tmp_path / "z.csv"
    res = invoke("export-latents", "--checkpoint", run_dir / "seed_0" / "model.npz",
                 "--data", data_dir, "--out", out)
    assert res.exit_code == 0, res.output
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "z0", "z1", "pc1", "pc2", "bit0", "bit1", "cluster", "label"]
    assert len(rows) == 81
    body = np.array(rows[1:], dtype=float)
    z, pc = body[:, 1:3], body[:, 3:5]
    assert pc[:, 0].var() >= pc[:, 1].var()
    # covariance eigendecomposition oracle, up to sign
    zc = z - z.mean(0)
    vecs = np.linalg.eigh(zc.T @ zc)[1][:, ::-1]
    for j in range(2):
        ref = zc @ vecs[:, j]
        assert min(np.abs(pc[:, j] - ref).max(), np.abs(pc[:, j] + ref).max()) < 1e-8
    np.testing.assert_array_equal(body[:, 7], body[:, 5] + 2 * body[:, 6])
    np.testing.assert_array_equal(body[:, 8], read_splits(data_dir).test.labels)


def test_export_latents_rejects_bad_checkpoint(tmp_path, data_dir):
    (tmp_path / "x.npz").write_bytes(b"not a checkpoint")
    res = invoke("export-latents", "--checkpoint", tmp_path / "x.npz", "--data", data_dir,
                 "--out", tmp_path / "z.csv")
    assert res.exit_code == EXIT_DATA


# configuration errors -------------------------------------------------------------------
@pytest.mark.parametrize("text", [
    "[vae]\nepochz = 3\n",
    "[nope]\na = 1\n",
    "[vae]\ndisc_capacity = 0.9\n",
    "[data]\nsource = files\npath = /does/not/exist\n",
    "[vae\n",
])
def test_config_errors_exit_three(tmp_path, text):
    cfg = tmp_path / "c.ini"
    cfg.write_text(text)
    res = invoke("run", "--config", cfg, "--out", tmp_path / "r")
    assert res.exit_code == EXIT_CONFIG, res.output


def test_missing_config_and_bad_override(tmp_path, tiny_cfg):
    assert invoke("run", "--config", tmp_path / "none.ini").exit_code == EXIT_CONFIG
    assert invoke("run", "--config", tiny_cfg, "--k", -1).exit_code == EXIT_CONFIG
    assert invoke("run", "--bogus-flag").exit_code == 2


def test_files_source_with_malformed_data_exits_four(tmp_path, data_dir):
    bad = tmp_path / "d"
    bad.mkdir()
    for name in ("manifest.json", "schema.json", "val.jsonl", "test.jsonl", "labels.json"):
        (bad / name).write_bytes((data_dir / name).read_bytes())
    (bad / "train.jsonl").write_text('{"features": [[0.0, 0.0]]}\n')
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[data]\nsource = files\npath = {bad}\n")
    assert invoke("run", "--config", cfg, "--out", tmp_path / "r").exit_code == EXIT_DATA


def test_help_lists_every_config_key():
    import configparser
    from neurosym.config import default_config_text
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(default_config_text())
    text = invoke("--help").output
    for section in parser.sections():
        assert f"[{section}]" in text
        for key in parser[section]:
            assert key in text, key
