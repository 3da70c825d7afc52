"""
Per-sample latency on a transmission-sized graph
================================================

A synthetic connected graph with 2848 vertices and average degree 2.7
stands in for a large grid.  Inference cost is dominated by the sparse
Laplacian products, which the instrumented operator counts.
"""

import numpy as np
from threadpoolctl import threadpool_limits

from fdia_cgcn.dataset import Scaler
from fdia_cgcn.evalbench import benchmark_inference
from fdia_cgcn.grid import random_connected_graph
from fdia_cgcn.nn import CgcnArch, init_model
from fdia_cgcn.spectral import scaled_laplacian_from_graph

n = 2848
graph = random_connected_graph(n, 2.7, rng=0)
model = init_model(CgcnArch.default(n), scaled_laplacian_from_graph(graph))
samples = np.random.default_rng(1).standard_normal((30, n, 2))

with threadpool_limits(limits=1):
    lat = benchmark_inference(model, Scaler.identity(n), samples, warmup=5)
print(f"mean {lat.mean_ms:.2f} ms, median {lat.median_ms:.2f} ms, p95 {lat.p95_ms:.2f} ms")

# (2 + 3 * 32) input channels, each pushed through K - 1 = 4 products
model.ltilde.reset_counter()
model.predict_proba(samples[:1])
print("Laplacian products per sample:", model.ltilde.matvecs)
