"""YAML configuration parsing: model, topology, cost weights, options.

Matrices are given row-major with explicit dimensions
({rows: r, cols: c, data: [...]}), as nested lists, or as scalars where a
1x1 or uniform value makes sense. Cost weights additionally accept the
structured forms described in the README (identity/scale, per-time block,
consensus disagreement).
"""

import numpy as np
import yaml

from .errors import ConfigError
from .model import MasModel, NetworkTopology, SynthesisConfig, validate_model

__all__ = ["load_config", "parse_config", "parse_matrix"]

_DEFAULTS = dict(eps_stop=1e-6, n_max=50, ridge=1e-12, psd_clip=1e-10,
                 mc_runs=10000, rng_seed=0, stop_mode="relative")


def parse_matrix(node, rows=None, cols=None, field="matrix"):
    """A matrix from a scalar, nested lists, or {rows, cols, data}."""
    if isinstance(node, dict):
        missing = [k for k in ("rows", "cols", "data") if k not in node]
        if missing:
            raise ConfigError(f"{field}: missing {', '.join(missing)}")
        r, c = int(node["rows"]), int(node["cols"])
        data = np.asarray(node["data"], dtype=float).reshape(-1)
        if data.size != r * c:
            raise ConfigError(f"{field}: {r}x{c} needs {r * c} values, got {data.size}")
        M = data.reshape(r, c)
    else:
        M = np.asarray(node, dtype=float)
        if M.ndim == 0:
            if rows is not None and cols is not None and rows == cols:
                M = float(M) * np.eye(rows)
            else:
                M = M.reshape(1, 1)
        elif M.ndim == 1:
            M = M.reshape(1, -1) if rows == 1 else M.reshape(-1, 1)
    if rows is not None and M.shape[0] != rows or cols is not None and M.shape[1] != cols:
        raise ConfigError(f"{field}: expected {rows}x{cols}, got {M.shape[0]}x{M.shape[1]}")
    return M


def _parse_weight(node, size, N, n_or_p, T_blocks, field):
    """Cost weight: full matrix or a structured form."""
    if node is None:
        raise ConfigError(f"missing required field {field!r}")
    if isinstance(node, dict) and "kind" in node:
        kind = node["kind"]
        if kind == "identity":
            return float(node.get("scale", 1.0)) * np.eye(size)
        if kind == "per_time_block":
            blk = parse_matrix(node.get("block"), N * n_or_p, N * n_or_p,
                               f"{field}.block")
            return np.kron(np.eye(T_blocks), blk)
        if kind == "consensus":
            scale = float(node.get("scale", 1.0))
            blk = scale * np.kron(N * np.eye(N) - np.ones((N, N)), np.eye(n_or_p))
            return np.kron(np.eye(T_blocks), blk)
        if kind == "full":
            return parse_matrix(node.get("matrix"), size, size, f"{field}.matrix")
        raise ConfigError(f"{field}: unknown kind {kind!r}")
    if isinstance(node, (int, float)):
        return float(node) * np.eye(size)
    return parse_matrix(node, size, size, field)


def _parse_noise(node, field):
    if node is None:
        raise ConfigError(f"missing required field {field!r}")
    if isinstance(node, (int, float)):
        return float(node)
    if isinstance(node, dict):
        if "per_target" in node:
            return np.asarray(node["per_target"], dtype=float)
        if "per_pair" in node:
            return np.asarray(node["per_pair"], dtype=float)
        if "per_agent" in node:
            return np.asarray(node["per_agent"], dtype=float)
        if "matrix" in node:
            return parse_matrix(node["matrix"], field=field)
        raise ConfigError(f"{field}: unknown noise form {sorted(node)}")
    return np.asarray(node, dtype=float)


def parse_config(doc, path="<config>"):
    """Build (MasModel, NetworkTopology, SynthesisConfig) from a parsed
    YAML document; raises ConfigError naming the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    model_node = doc.get("model")
    if model_node is None:
        raise ConfigError("missing required section 'model'")
    for key in ("N", "n", "p", "T"):
        if key not in model_node:
            raise ConfigError(f"model: missing required field {key!r}")
    N, n, p, T = (int(model_node[k]) for k in ("N", "n", "p", "T"))

    A = parse_matrix(model_node.get("A", 1.0), n, n, "model.A")
    B = parse_matrix(model_node.get("B", 1.0), n, p, "model.B")

    theta = _parse_noise(model_node.get("process_noise", 1.0), "model.process_noise")
    xi = _parse_noise(model_node.get("measurement_noise", 1.0),
                      "model.measurement_noise")

    mu0 = model_node.get("initial_state_mean")
    mu0 = np.zeros(N * n) if mu0 is None else np.asarray(mu0, dtype=float).reshape(-1)
    s0_node = model_node.get("initial_state_cov")
    if s0_node is None:
        sigma0 = np.eye(N * n)
    elif isinstance(s0_node, (int, float)):
        sigma0 = float(s0_node) * np.eye(N * n)
    else:
        sigma0 = parse_matrix(s0_node, N * n, N * n, "model.initial_state_cov")

    topo_node = doc.get("topology", {})
    edges = topo_node.get("edges", [])
    if topo_node.get("complete", False):
        topo = NetworkTopology.complete(N, self_loops=topo_node.get("self_loops", True))
    else:
        # config files number agents from 1
        for e in edges:
            if not (1 <= int(e[0]) <= N and 1 <= int(e[1]) <= N):
                raise ConfigError(f"topology.edges: pair {list(e)} out of range 1..{N}")
        topo = NetworkTopology.from_edges(
            N, [(int(e[0]) - 1, int(e[1]) - 1) for e in edges],
            self_loops=topo_node.get("self_loops", True),
            symmetric=topo_node.get("symmetric", True))

    cost_node = doc.get("cost")
    if cost_node is None:
        raise ConfigError("missing required section 'cost'")
    Q = _parse_weight(cost_node.get("Q"), N * n * (T + 1), N, n, T + 1, "cost.Q")
    R = _parse_weight(cost_node.get("R"), N * p * T, N, p, T, "cost.R")

    opt_node = doc.get("options", {})
    opts = dict(_DEFAULTS)
    for key in opts:
        if key in opt_node:
            opts[key] = type(_DEFAULTS[key])(opt_node[key])
    unknown = set(opt_node) - set(opts)
    if unknown:
        raise ConfigError(f"options: unknown fields {sorted(unknown)}")

    model = MasModel(A=A, B=B, N=N, n=n, p=p, T=T, process_noise=theta,
                     measurement_noise=xi, initial_state_mean=mu0,
                     initial_state_cov=sigma0)
    cfg = SynthesisConfig(Q=Q, R=R, eps_stop=opts["eps_stop"],
                          n_max=opts["n_max"], ridge=opts["ridge"],
                          psd_clip=opts["psd_clip"], mc_runs=opts["mc_runs"],
                          rng_seed=opts["rng_seed"], stop_mode=opts["stop_mode"])
    return model, topo, cfg


def load_config(path, validate=True, allow_singular_noise=False):
    """Read a YAML config file; returns a ValidatedInstance (or the raw
    triple with validate=False)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    model, topo, cfg = parse_config(doc, path=str(path))
    if not validate:
        return model, topo, cfg
    return validate_model(model, topo, cfg,
                          allow_singular_noise=allow_singular_noise)
