"""Method dispatch shared by the CLI and the external rank-search hook:
turn an order-3 kernel tensor into an emitted block plus a report.
"""

import numpy as np

from .convblocks import (
    count_params_flops,
    emit_cpd_block,
    emit_svd_block,
    emit_tkd_cpd_block,
)
from .cpd import AlsOptions, CPModel, cpd_als, intensity, sensitivity
from .epc import EpcOptions, epc_correct
from .fileio import Block
from .hybrid import should_merge, tkd_cpd_epc, to_equivalent_cp

__all__ = ["decompose_to_block", "METHODS"]

METHODS = ("cpd", "cpd-epc", "tkd-cpd-epc", "svd")


def _metrics(layers, rel_error, model, input_hw):
    params, flops = count_params_flops(layers, input_hw)
    return {
        "rel_error": float(rel_error),
        "sensitivity": float(sensitivity(model)),
        "intensity": float(intensity(model)),
        "params": int(params),
        "flops": int(flops),
        "input_hw": list(input_hw),
    }


def decompose_to_block(tensor, method, rank, spec, seed=0, ranks=None, theta=0.5,
                       delta_rel=None, input_hw=(56, 56), restarts=3):
    """Decompose a (D^2, S, T) tensor and emit the matching layer block.

    `delta_rel` is the error bound as a fraction of the tensor norm; when
    omitted, EPC preserves the error the unconstrained fit achieved.

    Returns (Block, report); the report carries before/after diagnostics
    for the corrected methods.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    norm_t = np.linalg.norm(tensor)
    delta = None if delta_rel is None else float(delta_rel) * norm_t
    report = {"method": method, "rank": int(rank)}
    als_opts = AlsOptions(max_iters=1000, tol=1e-12, restarts=restarts, seed=seed)

    if method == "svd":
        if spec.kernel_size != 1 or tensor.shape[0] != 1:
            raise ValueError("svd requires a 1x1 kernel")
        matrix = tensor[0].T  # (T, S)
        layers = emit_svd_block(matrix, rank, spec)
        u, s_vals, vt = np.linalg.svd(matrix, full_matrices=False)
        rel = float(np.sqrt(np.sum(s_vals[rank:] ** 2)) / norm_t) if norm_t else 0.0
        view = CPModel(s_vals[None, :rank], vt[:rank].T, u[:, :rank])
        block = Block("svd", spec, layers, _metrics(layers, rel, view, input_hw))
        report["rel_error"] = rel
        return block, report

    if method == "cpd":
        res = cpd_als(tensor, rank, als_opts)
        model = res.model
        rel = res.rel_error
        layers = emit_cpd_block(model, spec)
        block = Block("cpd", spec, layers, _metrics(layers, rel, model, input_hw))
        report["rel_error"] = rel
        return block, report

    if method == "cpd-epc":
        res = cpd_als(tensor, rank, als_opts)
        report["before"] = {
            "rel_error": res.rel_error,
            "sensitivity": sensitivity(res.model),
            "intensity": intensity(res.model),
        }
        corrected, trace = epc_correct(tensor, res.model, EpcOptions(delta=delta))
        rel = float(np.linalg.norm(tensor - corrected.to_tensor()) / norm_t) \
            if norm_t else 0.0
        report["after"] = {
            "rel_error": rel,
            "sensitivity": sensitivity(corrected),
            "intensity": intensity(corrected),
        }
        report["epc_sweeps"] = len(trace) - 1
        layers = emit_cpd_block(corrected, spec)
        block = Block("cpd", spec, layers, _metrics(layers, rel, corrected, input_hw))
        report["rel_error"] = rel
        return block, report

    # tkd-cpd-epc
    if delta is None and ranks is None:
        raise ValueError(
            "tkd-cpd-epc needs an error bound (--delta) or fixed ranks (--ranks)"
        )
    epc_opts = EpcOptions() if delta is None else None
    hybrid = tkd_cpd_epc(
        tensor,
        delta if delta is not None else norm_t,
        rank,
        theta=theta,
        ranks=ranks,
        als_opts=als_opts,
        epc_opts=epc_opts,
    )
    rel = float(np.linalg.norm(tensor - hybrid.to_tensor()) / norm_t) if norm_t else 0.0
    report["ranks"] = hybrid.ranks
    report["rel_error"] = rel
    merged = should_merge(hybrid.ranks)
    report["merged"] = merged
    if merged:
        model = to_equivalent_cp(hybrid)
        layers = emit_cpd_block(model, spec)
        block = Block("cpd", spec, layers, _metrics(layers, rel, model, input_hw))
    else:
        layers = emit_tkd_cpd_block(hybrid, spec)
        view = to_equivalent_cp(hybrid)
        block = Block(
            "tkd-cpd", spec, layers, _metrics(layers, rel, view, input_hw)
        )
    report["after"] = {
        "rel_error": rel,
        "sensitivity": sensitivity(hybrid.core_cp),
        "intensity": intensity(hybrid.core_cp),
    }
    return block, report
