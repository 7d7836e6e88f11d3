import json

import numpy as np
import pytest

from conftest import degenerate_pair, random_cp_tensor
from convfactor import (
    Block,
    ConvSpec,
    CPModel,
    TensorFileError,
    count_params_flops,
    emit_cpd_block,
    read_block,
    read_tensor,
    restore_kernel,
    write_block,
    write_tensor,
)
from convfactor.cli import main


def make_kernel_file(tmp_path, rng, dims=(9, 5, 6), rank=3, name="k.kten"):
    t, _ = random_cp_tensor(rng, dims, rank)
    d = int(np.sqrt(dims[0]))
    path = tmp_path / name
    write_tensor(path, restore_kernel(t, d))
    return path


class TestTensorFile:
    def test_roundtrip_f64_bitwise(self, tmp_path):
        arr = np.random.default_rng(0).standard_normal((3, 4, 5))
        path = tmp_path / "t.kten"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.dtype == np.float64
        assert np.array_equal(back, arr)
        write_tensor(path, back)
        assert np.array_equal(read_tensor(path), arr)

    def test_roundtrip_f32(self, tmp_path):
        arr = np.random.default_rng(1).standard_normal((2, 3)).astype(np.float32)
        path = tmp_path / "t.kten"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.kten"
        path.write_bytes(b"NOPE!\n{}")
        with pytest.raises(TensorFileError):
            read_tensor(path)

    def test_truncated_payload(self, tmp_path):
        arr = np.zeros((4, 4))
        path = tmp_path / "t.kten"
        write_tensor(path, arr)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(TensorFileError):
            read_tensor(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "t.kten"
        path.write_bytes(b"KTEN1\nnot json\n")
        with pytest.raises(TensorFileError):
            read_tensor(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(TensorFileError):
            read_tensor(tmp_path / "absent.kten")


class TestBlockFile:
    def make_block(self, rng):
        m = CPModel(
            rng.standard_normal((9, 3)),
            rng.standard_normal((5, 3)),
            rng.standard_normal((6, 3)),
        )
        spec = ConvSpec(5, 6, 3, stride=1, pad=1, bias=rng.standard_normal(6))
        layers = emit_cpd_block(m, spec)
        params, flops = count_params_flops(layers, (8, 8))
        metrics = {
            "rel_error": 0.0,
            "sensitivity": 1.0,
            "intensity": 1.0,
            "params": params,
            "flops": flops,
            "input_hw": [8, 8],
        }
        return Block("cpd", spec, layers, metrics)

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        block = self.make_block(rng)
        path = write_block(tmp_path / "blk", block)
        back = read_block(path)
        assert back.kind == "cpd"
        assert len(back.layers) == 3
        for l1, l2 in zip(block.layers, back.layers):
            assert np.array_equal(l1.weights, l2.weights)
            assert l1.groups == l2.groups and l1.stride == l2.stride
        assert back.metrics["params"] == block.metrics["params"]

    def test_params_flops_recomputation_matches(self, tmp_path):
        rng = np.random.default_rng(3)
        block = self.make_block(rng)
        back = read_block(write_block(tmp_path / "blk", block))
        params, flops = count_params_flops(back.layers, back.metrics["input_hw"])
        assert params == back.metrics["params"]
        assert flops == back.metrics["flops"]

    def test_missing_weights_file(self, tmp_path):
        rng = np.random.default_rng(4)
        path = write_block(tmp_path / "blk", self.make_block(rng))
        (tmp_path / "blk" / "layer_01.kten").unlink()
        with pytest.raises(TensorFileError):
            read_block(path)

    def test_broken_chain_detected(self, tmp_path):
        rng = np.random.default_rng(5)
        path = write_block(tmp_path / "blk", self.make_block(rng))
        doc = json.loads(path.read_text())
        doc["layers"][1]["in"] = 99
        doc["layers"][1]["groups"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(TensorFileError):
            read_block(path)


class TestCliDecompose:
    def test_cpd_roundtrip(self, tmp_path, capsys):
        rng = np.random.default_rng(6)
        kpath = make_kernel_file(tmp_path, rng)
        out = tmp_path / "blk"
        code = main([
            "decompose", "--input", str(kpath), "--method", "cpd",
            "--rank", "3", "--out", str(out),
        ])
        assert code == 0
        text = capsys.readouterr().out
        assert "rel_error" in text
        block = read_block(out / "block.json")
        assert block.kind == "cpd"
        assert block.metrics["rel_error"] <= 1e-8

    def test_svd_on_spatial_kernel_exits_1(self, tmp_path, capsys):
        rng = np.random.default_rng(7)
        kpath = make_kernel_file(tmp_path, rng)
        code = main([
            "decompose", "--input", str(kpath), "--method", "svd",
            "--rank", "2", "--out", str(tmp_path / "o"),
        ])
        assert code == 1
        assert "1x1" in capsys.readouterr().err

    def test_malformed_input_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.kten"
        bad.write_bytes(b"garbage")
        code = main([
            "decompose", "--input", str(bad), "--method", "cpd",
            "--rank", "2", "--out", str(tmp_path / "o"),
        ])
        assert code == 2

    def test_epc_report_shows_before_after(self, tmp_path, capsys):
        rng = np.random.default_rng(8)
        t, _ = degenerate_pair(rng, (9, 5, 6))
        kpath = tmp_path / "k.kten"
        write_tensor(kpath, restore_kernel(t, 3))
        code = main([
            "decompose", "--input", str(kpath), "--method", "cpd-epc",
            "--rank", "2", "--out", str(tmp_path / "blk"),
        ])
        assert code == 0
        text = capsys.readouterr().out
        assert "before EPC" in text and "after  EPC" in text

    def test_deterministic_given_seed(self, tmp_path, capsys):
        rng = np.random.default_rng(9)
        kpath = make_kernel_file(tmp_path, rng)
        for d in ("b1", "b2"):
            assert main([
                "decompose", "--input", str(kpath), "--method", "cpd",
                "--rank", "2", "--seed", "5", "--out", str(tmp_path / d),
            ]) == 0
        j1 = (tmp_path / "b1" / "block.json").read_bytes()
        j2 = (tmp_path / "b2" / "block.json").read_bytes()
        assert j1 == j2
        w1 = (tmp_path / "b1" / "layer_00.kten").read_bytes()
        w2 = (tmp_path / "b2" / "layer_00.kten").read_bytes()
        assert w1 == w2

    def test_rank1_kernel_reported_exact(self, tmp_path, capsys):
        rng = np.random.default_rng(19)
        kpath = make_kernel_file(tmp_path, rng, rank=1)
        out = tmp_path / "blk"
        assert main([
            "decompose", "--input", str(kpath), "--method", "cpd",
            "--rank", "1", "--out", str(out),
        ]) == 0
        assert read_block(out / "block.json").metrics["rel_error"] <= 1e-8

    def test_tkd_requires_delta_or_ranks(self, tmp_path, capsys):
        rng = np.random.default_rng(10)
        kpath = make_kernel_file(tmp_path, rng)
        code = main([
            "decompose", "--input", str(kpath), "--method", "tkd-cpd-epc",
            "--rank", "2", "--out", str(tmp_path / "o"),
        ])
        assert code == 1


class TestCliVerify:
    def decompose(self, tmp_path, rng, method="cpd", rank=3, extra=()):
        kpath = make_kernel_file(tmp_path, rng)
        out = tmp_path / "blk"
        assert main([
            "decompose", "--input", str(kpath), "--method", method,
            "--rank", str(rank), "--out", str(out), *extra,
        ]) == 0
        return kpath, out / "block.json"

    def test_exact_block_verifies(self, tmp_path, capsys):
        rng = np.random.default_rng(11)
        kpath, bpath = self.decompose(tmp_path, rng)
        code = main([
            "verify", "--block", str(bpath), "--input", str(kpath),
            "--trials", "3",
        ])
        assert code == 0
        assert "OK" in capsys.readouterr().out

    def test_tampered_weights_fail(self, tmp_path, capsys):
        rng = np.random.default_rng(12)
        kpath, bpath = self.decompose(tmp_path, rng)
        wfile = bpath.parent / "layer_01.kten"
        arr = read_tensor(wfile)
        write_tensor(wfile, arr + 0.5)
        code = main([
            "verify", "--block", str(bpath), "--input", str(kpath),
            "--trials", "2",
        ])
        assert code != 0

    def test_zero_trials_vacuous(self, tmp_path, capsys):
        rng = np.random.default_rng(13)
        kpath, bpath = self.decompose(tmp_path, rng)
        code = main([
            "verify", "--block", str(bpath), "--input", str(kpath),
            "--trials", "0",
        ])
        assert code == 0
        assert "trials: 0" in capsys.readouterr().out

    def test_broken_chain_exits_2(self, tmp_path, capsys):
        rng = np.random.default_rng(14)
        kpath, bpath = self.decompose(tmp_path, rng)
        doc = json.loads(bpath.read_text())
        doc["layers"][1]["in"] = 99
        bpath.write_text(json.dumps(doc))
        code = main([
            "verify", "--block", str(bpath), "--input", str(kpath),
        ])
        assert code == 2

    def test_hybrid_block_verifies(self, tmp_path, capsys):
        rng = np.random.default_rng(15)
        kpath, bpath = self.decompose(
            tmp_path, rng, method="tkd-cpd-epc", rank=4, extra=("--delta", "0.05")
        )
        code = main([
            "verify", "--block", str(bpath), "--input", str(kpath),
            "--trials", "2",
        ])
        assert code == 0


class TestCliRankSearch:
    def test_finds_exact_rank(self, tmp_path, capsys):
        rng = np.random.default_rng(16)
        kpath = make_kernel_file(tmp_path, rng, rank=4)
        code = main([
            "rank-search", "--input", str(kpath), "--method", "cpd",
            "--eps", "1e-8", "--rmax", "16", "--json",
        ])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["rank"] == 4
        assert doc["met"] is True

    def test_eps_met_at_rmin(self, tmp_path, capsys):
        rng = np.random.default_rng(17)
        kpath = make_kernel_file(tmp_path, rng, rank=2)
        code = main([
            "rank-search", "--input", str(kpath), "--method", "cpd",
            "--eps", "1.0", "--rmin", "1", "--rmax", "8",
        ])
        assert code == 0
        assert "rank=1" in capsys.readouterr().out

    def test_bad_evaluator_exits_3(self, tmp_path, capsys):
        rng = np.random.default_rng(18)
        kpath = make_kernel_file(tmp_path, rng)
        code = main([
            "rank-search", "--input", str(kpath), "--method", "cpd",
            "--eps", "1e-8", "--rmax", "4", "--evaluator", "false",
        ])
        assert code == 3
