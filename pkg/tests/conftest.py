"""Shared fixtures and the independent oracles the tests compare against.

The oracles are deliberately naive (explicit loops, dense matrices) and share
no code with the implementation.
"""
import math

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conv_oracle(x, kernels, dilation, padding):
    """Loop-based 1-D convolution on (C_in, T) with zero padding."""
    C_out, width, C_in = kernels.shape
    T = x.shape[1]
    if padding == "causal":
        offsets = [(k - (width - 1)) * dilation for k in range(width)]
    else:
        offsets = [(k - (width - 1) // 2) * dilation for k in range(width)]
    out = np.zeros((C_out, T))
    for o in range(C_out):
        for t in range(T):
            acc = 0.0
            for k, off in enumerate(offsets):
                s = t + off
                if 0 <= s < T:
                    for c in range(C_in):
                        acc += kernels[o, k, c] * x[c, s]
            out[o, t] = acc
    return out


def dense_normalize_oracle(A):
    """Explicit degree matrix, explicit inverse square root, two products."""
    J = A.shape[0]
    A_hat = A + np.eye(J)
    Lam = np.zeros((J, J))
    for i in range(J):
        Lam[i, i] = sum(A_hat[i, j] for j in range(J))
    Lam_inv_sqrt = np.zeros((J, J))
    for i in range(J):
        Lam_inv_sqrt[i, i] = 1.0 / math.sqrt(Lam[i, i])
    return Lam_inv_sqrt @ A_hat @ Lam_inv_sqrt


def config_parameter_oracle(template_joints, cfg):
    """Closed-form parameter count from the config alone (no model built)."""
    C_in, C0, K0 = 3, cfg.gvfe_out_channels, cfg.gvfe_temporal_window
    total = {"gvfe": template_joints * C0 * K0 * C_in}
    if cfg.bias:
        total["gvfe"] += template_joints * C0
    if cfg.gvfe_bn:
        total["gvfe"] += 2 * C0
    widths = [C0] + list(cfg.blocks)
    K1 = cfg.dhtcn_temporal_window
    for k in range(1, len(widths)):
        c_in, c = widths[k - 1], widths[k]
        total[f"block{k}.sgcn"] = c_in * c + (c if cfg.bias else 0)
        per_layer = c * K1 * c + 2 * c + (c if cfg.bias else 0)
        total[f"block{k}.dhtcn"] = cfg.dhtcn_layers * per_layer
    total["classifier"] = widths[-1] * cfg.num_classes + cfg.num_classes
    return sum(total.values()), total


def power_iteration_spectral_radius(M, iters=2000, seed=0):
    v = np.random.default_rng(seed).normal(size=M.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        n = np.linalg.norm(w)
        if n == 0:
            return 0.0
        v = w / n
        lam = abs(v @ M @ v)
    return lam


def all_graphs(J):
    """Every simple undirected graph on J labelled vertices, as dense matrices."""
    pairs = [(i, j) for i in range(J) for j in range(i + 1, J)]
    for mask in range(1 << len(pairs)):
        A = np.zeros((J, J))
        for bit, (i, j) in enumerate(pairs):
            if mask >> bit & 1:
                A[i, j] = A[j, i] = 1.0
        yield A


def measured_dependency_window(layers, window, T=None, channels=2, seed=0):
    """Count the input frames whose perturbation moves one central output frame.

    Kernels and base input are positive so every ReLU stays active and no
    contribution cancels; BN runs in eval mode with unit running statistics.
    """
    from stgcn_kit.dhtcn import dhtcn_forward, dhtcn_init

    r = np.random.default_rng(seed)
    params = dhtcn_init(channels, layers, window, seed=seed)
    for layer in params.layers:
        layer.kernel[...] = r.uniform(0.1, 1.0, size=layer.kernel.shape)
    rf_bound = 1 + (window - 1) * (2 ** layers - 1)
    T = T or 2 * rf_bound + 11
    t0 = T // 2
    x = r.uniform(0.5, 1.5, size=(channels, 1, T))
    base = dhtcn_forward(x, params, "eval")[:, 0, t0]
    count = 0
    for s in range(T):
        x2 = x.copy()
        x2[:, 0, s] += 1.0
        if not np.array_equal(dhtcn_forward(x2, params, "eval")[:, 0, t0], base):
            count += 1
    return count


MINIMAL_SKL = """SKL 1
template chain3
dims 3 3 2
label 0
0.0 0.0 0.0 1.0 0.0 0.0 2.0 0.0 0.0
0.5 0.0 0.0 1.5 0.0 0.0 2.5 0.0 0.0
"""


def skl_corpus(count=50, seed=0):
    """``count`` valid SKL texts covering T=1, comments, negatives and odd floats."""
    from stgcn_kit.data import SkeletonSequence, serialize_skl
    from stgcn_kit.graph import TEMPLATES

    r = np.random.default_rng(seed)
    names = sorted(TEMPLATES)
    texts = [MINIMAL_SKL]
    for i in range(1, count):
        tpl = TEMPLATES[names[i % len(names)]]
        T = 1 if i % 7 == 1 else int(r.integers(1, 12))
        P = r.normal(0, 10.0 ** r.integers(-3, 4), size=(3, tpl.joint_count, T))
        if i % 5 == 0:
            P = -np.abs(P)
        if i % 11 == 0:
            P[0, 0, 0] = -0.0
            P[1, 0, 0] = 5e-324
            P[2, 0, 0] = 1.7976931348623157e308
        text = serialize_skl(SkeletonSequence(P, int(r.integers(0, 60)), int(r.integers(0, 40)), tpl.name))
        if i % 3 == 0:
            lines = text.splitlines()
            lines.insert(0, "# generated corpus file")
            lines.insert(3, "   # indented comment")
            lines.append("")
            lines.append("# trailing comment")
            text = "\n".join(lines) + "\n"
        texts.append(text)
    return texts


def _lines(*rows):
    return "\n".join(rows) + "\n"


FRAME3 = "0 0 0 1 0 0 2 0 0"

# (name, text, expected error class name, expected line number)
MALFORMED_SKL = [
    ("empty", "", "SklHeaderError", 1),
    ("bad_magic", _lines("SKX 1", "template chain3", "dims 3 3 1", "label 0", FRAME3), "SklHeaderError", 1),
    ("bad_version", _lines("SKL 2", "template chain3", "dims 3 3 1", "label 0", FRAME3), "SklHeaderError", 1),
    ("unknown_template", _lines("SKL 1", "template octopus", "dims 3 3 1", "label 0", FRAME3), "SklHeaderError", 2),
    ("missing_label", _lines("SKL 1", "template chain3", "dims 3 3 1"), "SklHeaderError", 3),
    ("bad_dims_arity", _lines("SKL 1", "template chain3", "dims 3 3", "label 0", FRAME3), "SklHeaderError", 3),
    ("dims_token", _lines("SKL 1", "template chain3", "dims 3 three 1", "label 0", FRAME3), "SklTokenError", 3),
    ("wrong_joint_count", _lines("SKL 1", "template chain3", "dims 3 4 1", "label 0", FRAME3), "SklExtentError", 3),
    ("wrong_channels", _lines("SKL 1", "template chain3", "dims 2 3 1", "label 0", FRAME3), "SklExtentError", 3),
    ("zero_frames", _lines("SKL 1", "template chain3", "dims 3 3 0", "label 0"), "SklExtentError", 3),
    ("too_few_frames", _lines("SKL 1", "template chain3", "dims 3 3 5", "label 0", "subject 1",
                              FRAME3, FRAME3, FRAME3, FRAME3), "SklExtentError", 9),
    ("too_many_frames", _lines("SKL 1", "template chain3", "dims 3 3 1", "label 0", FRAME3, FRAME3),
     "SklExtentError", 6),
    ("short_frame", _lines("SKL 1", "template chain3", "dims 3 3 1", "label 0", "0 0 0 1 0 0 2 0"),
     "SklExtentError", 5),
    ("non_numeric", _lines("SKL 1", "template chain3", "dims 3 3 1", "label 0", "0 0 0 1 zero 0 2 0 0"),
     "SklTokenError", 5),
    ("label_token", _lines("SKL 1", "template chain3", "dims 3 3 1", "label x", FRAME3), "SklTokenError", 4),
    ("nan", _lines("SKL 1", "template chain3", "dims 3 3 1", "label 0", "0 0 0 nan 0 0 2 0 0"),
     "SklValueError", 5),
    ("inf", _lines("SKL 1", "template chain3", "dims 3 3 1", "label 0", "0 0 0 1 0 0 -inf 0 0"),
     "SklValueError", 5),
    ("comment_shift", _lines("# header comment", "SKL 1", "template chain3", "dims 3 3 1", "label 0",
                             "0 0 0 1 0 0 2 0 NaN"), "SklValueError", 6),
]


# acceptance lines, printed once more in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
