"""Compare the compiled and pure-Python CSR kernels.

    python benchmarks/bench_kernels.py [--repeat 20] [--dim 128]

Times ``S @ X`` and ``S.T @ G`` for every relation of the toy graph, plus
one full forward/backward pass of the default model under each backend.
"""
import argparse
import timeit

import numpy as np

from ktnlab import autodiff as ad
from ktnlab import kernels
from ktnlab.hgnn import HgnnConfig, forward, init_model
from ktnlab.ktn import joint_loss
from ktnlab.synthgen import generate, toy_config


def bench_kernels(graph, dim, repeat, backend):
    rng = np.random.default_rng(0)
    total_f = total_b = 0.0
    for r in graph.schema.relations:
        m = graph.neighbor_mean(r.name).matrix
        x = rng.standard_normal((m.shape[1], dim))
        g = rng.standard_normal((m.shape[0], dim))
        total_f += min(timeit.repeat(
            lambda: kernels.csr_matmul(m.indptr, m.indices, m.data, x, backend=backend),
            number=1, repeat=repeat))
        total_b += min(timeit.repeat(
            lambda: kernels.csr_matmul_t(m.indptr, m.indices, m.data, g, m.shape[1], backend=backend),
            number=1, repeat=repeat))
    return total_f, total_b


def bench_step(graph, repeat, backend):
    model = init_model(graph.schema, HgnnConfig(), seed=0)
    labels = graph.labels["s"]
    saved = kernels.BACKEND
    kernels.set_backend(backend)

    def step():
        ad.zero_grads(model.parameters())
        _, _, loss = joint_loss(model, None, graph, "s", "t", labels, H=forward(model, graph))
        ad.backward(loss)

    try:
        return min(timeit.repeat(step, number=1, repeat=max(repeat // 4, 2)))
    finally:
        kernels.set_backend(saved)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--dim", type=int, default=128)
    args = p.parse_args()
    graph = generate(toy_config(0)).graph
    nnz = sum(len(e) for e in graph.edges.values())
    print(f"toy graph: {sum(graph.num_nodes.values())} nodes, {nnz} edges, dim {args.dim}")
    backends = ["python"] + (["cython"] if kernels.HAVE_COMPILED else [])
    if not kernels.HAVE_COMPILED:
        print("compiled extension not built; timing the fallback only")
    print(f"{'backend':8s} {'S@X ms':>9s} {'S.T@G ms':>9s} {'step ms':>9s}")
    for b in backends:
        f, t = bench_kernels(graph, args.dim, args.repeat, b)
        s = bench_step(graph, args.repeat, b)
        print(f"{b:8s} {f * 1e3:9.3f} {t * 1e3:9.3f} {s * 1e3:9.1f}")


if __name__ == "__main__":
    main()
