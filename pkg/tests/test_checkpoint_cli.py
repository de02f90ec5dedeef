import subprocess
import sys

import numpy as np
import pytest

from dagconv.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from dagconv.cli import main
from dagconv.dag import load_dag, sample_er_dag
from dagconv.errors import ParameterError
from dagconv.harness import ExperimentConfig, read_csv
from dagconv.models import ArchConfig, build_dcn, build_fbgcnn, build_gcn, build_mlp
from dagconv.signal import transitive_closure

ARCH = ArchConfig(hidden=4, layers=2, order=3)


def _models():
    dag = sample_er_dag(15, 0.3, seed=0)
    cl = transitive_closure(dag)
    cand = [0, 2, 5]
    return dag, [
        build_dcn(dag, cl, arch=ARCH, seed=1),
        build_dcn(dag, cl, n_shifts=6, transposed=True, arch=ARCH, candidates=cand, seed=1, f_in=2),
        build_fbgcnn(dag, transposed=True, arch=ARCH, seed=1),
        build_gcn(dag, arch=ARCH, candidates=cand, seed=1),
        build_mlp(15, arch=ARCH, seed=1),
        build_mlp(15, arch=ARCH, candidates=cand, seed=1),
    ]


@pytest.mark.parametrize("idx", range(6))
def test_checkpoint_round_trip_is_exact(tmp_path, rng, idx):
    dag, models = _models()
    model = models[idx]
    f_in = 2 if idx == 1 else 1
    x = rng.standard_normal((4, 15, f_in))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path, dag)
    assert back.name == model.name
    np.testing.assert_array_equal(back(x), model(x))
    assert dumps(back) == dumps(model)


def test_checkpoint_header_is_checked():
    dag, _ = _models()
    with pytest.raises(ParameterError):
        loads("dagconv-checkpoint 2\nname x\n", dag)
    with pytest.raises(ParameterError):
        loads("dagconv-checkpoint 1\nname x\nlayer attention f_in=1\n", dag)


# -- CLI ----------------------------------------------------------------------

SMALL = ["--n", "20", "--m", "120", "--n-src-nodes", "5", "--gt-shifts", "5", "--candidates", "5",
         "--epochs", "2"]


def test_show_config_prints_every_field(capsys):
    assert main(["show-config", "--n", "42"]) == 0
    out = capsys.readouterr().out
    cfg = ExperimentConfig.loads(out)
    assert cfg.n == 42 and cfg == ExperimentConfig(n=42)


def test_config_file_then_flags(tmp_path, capsys):
    path = tmp_path / "c.txt"
    path.write_text("n = 30\np = 0.4\n")
    assert main(["show-config", "--config", str(path), "--p", "0.1"]) == 0
    cfg = ExperimentConfig.loads(capsys.readouterr().out)
    assert (cfg.n, cfg.p) == (30, 0.1)


def test_gen_graph(tmp_path):
    out = tmp_path / "g.txt"
    assert main(["gen-graph", "--n", "12", "--p", "0.5", "--seed", "3", "--out", str(out)]) == 0
    assert load_dag(out) == sample_er_dag(12, 0.5, seed=3)


@pytest.mark.parametrize("task,extra", [("diffusion", []), ("source-id", ["--transposed", "true"])])
def test_gen_train_eval(tmp_path, capsys, task, extra):
    data, ckpt = tmp_path / "d", tmp_path / "m.ckpt"
    assert main(["gen-data", "--task", task, *SMALL, "--seed", "4", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--checkpoint", str(ckpt), *extra]) == 0
    trained = capsys.readouterr().out
    assert main(["eval", "--data", str(data), "--checkpoint", str(ckpt)]) == 0
    evaluated = capsys.readouterr().out.strip()
    # eval reproduces the score printed after training
    assert evaluated.split()[-1] == [ln for ln in trained.splitlines() if ln.startswith("test")][0].split()[-1]


def test_task_mismatches_are_parameter_errors(tmp_path):
    src, diff, ckpt = tmp_path / "s", tmp_path / "d", tmp_path / "m.ckpt"
    main(["gen-data", "--task", "source-id", *SMALL, "--out", str(src)])
    main(["gen-data", "--task", "diffusion", *SMALL, "--out", str(diff)])
    assert main(["train", "--data", str(src), "--checkpoint", str(ckpt), "--task", "diffusion"]) == 2
    assert main(["train", "--data", str(diff), "--checkpoint", str(ckpt)]) == 0
    assert main(["eval", "--data", str(src), "--checkpoint", str(ckpt)]) == 2


def test_parameter_error_exit_code(capsys):
    assert main(["show-config", "--p", "abc"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["gen-graph", "--p", "2", "--out", "unused.txt"]) == 2


def test_numeric_error_exit_code(tmp_path):
    # a non-finite target makes training diverge (category 3)
    data = tmp_path / "d"
    main(["gen-data", *SMALL, "--out", str(data)])
    y = (data / "y_obs.txt").read_text().splitlines()
    y[0] = " ".join(["inf"] + y[0].split()[1:])
    (data / "y_obs.txt").write_text("\n".join(y) + "\n")
    for split in ("train", "val"):
        (data / f"split_{split}.txt").write_text(" ".join(map(str, range(0, 120, 2 if split == "train" else 3))))
    assert main(["train", "--data", str(data), "--checkpoint", str(tmp_path / "x")]) == 3
    assert main(["train", "--model", "ls", *SMALL, "--checkpoint", str(tmp_path / "x")]) == 2


def test_sweep_and_table_commands(tmp_path, capsys):
    out = tmp_path / "res"
    args = [*SMALL, "--realizations", "2", "--output", str(out)]
    assert main(["sweep-noise", "--methods", "LS,DCN", "--grid", "0.1,0.3", *args]) == 0
    assert main(["sweep-unobserved", "--methods", "DCN-T", "--grid", "0.2,0.4", *args]) == 0
    assert main(["sweep-density", "--methods", "DCN-T", "--grid", "0.1,0.3", *args]) == 0
    assert main(["table1", "--methods", "DCN,MLP", *args]) == 0
    assert main(["run", "--model", "ls", "--noise", "0.1", *args]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted([
        "sweep_noise_LS.csv", "sweep_noise_DCN.csv", "sweep_unobserved_DCN-T.csv", "sweep_density_DCN-T.csv",
        "table1_diffusion_DCN.csv", "table1_diffusion_MLP.csv", "table1_source-id_DCN.csv",
        "table1_source-id_MLP.csv", "run_diffusion_LS.csv",
    ])
    rows = read_csv(out / "sweep_noise_LS.csv")
    assert sum(r["kind"] == "aggregate" for r in rows) == 2
    assert "source-id:" in capsys.readouterr().out


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "dagconv.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "dagconv" in res.stdout
