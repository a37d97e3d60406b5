#!/usr/bin/env python3
"""Development check of the desk-scale directional results (not shipped in tests).

Trains the full model and the no-message-passing ablation on 200 graphs for
10 epochs x 50 batches, then prints test accuracies and the key efficiency
cells, mirroring what the acceptance suite asserts.
"""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from scenesearch import procgen, trainer, evalharness, search
from scenesearch.embeddings import load_embeddings
from scenesearch.model import Model
from scenesearch.cli import default_embeddings_path


def main():
    t0 = time.time()
    table = load_embeddings(default_embeddings_path())
    train_cfg = procgen.default_config("train")
    test_cfg = procgen.default_config("test")
    train_graphs = [procgen.generate_graph(train_cfg, procgen.dataset_graph_seed(0, i))
                    for i in range(200)]
    test_graphs = [procgen.generate_graph(test_cfg, procgen.dataset_graph_seed(1, i))
                   for i in range(100)]
    print(f"[{time.time()-t0:.0f}s] datasets ready", flush=True)

    tc = trainer.TrainConfig(epochs=10, batches_per_epoch=50, graphs_per_batch=10, seed=0)
    hms = Model.create(table, "full", seed=0)
    trainer.train(hms, train_graphs, tc, gen_config=train_cfg,
                  log=lambda m: print("  " + m, flush=True))
    print(f"[{time.time()-t0:.0f}s] full model trained", flush=True)

    nmp = Model.create(table, "no_message_passing", seed=0)
    trainer.train(nmp, train_graphs, tc, gen_config=train_cfg,
                  log=lambda m: print("  " + m, flush=True))
    print(f"[{time.time()-t0:.0f}s] ablation trained", flush=True)

    pol_hms = search.ModelPolicy(hms, name="model")
    pol_nmp = search.ModelPolicy(nmp, name="nmp")
    pol_wv = search.WordVecPolicy(table)
    pol_rnd = search.RandomPolicy()
    pol_oracle = search.OraclePolicy()

    for pol in (pol_hms, pol_nmp, pol_wv, pol_rnd, pol_oracle):
        rep = evalharness.classification_accuracy(pol, test_graphs, test_cfg,
                                                  samples_per_graph=3, seed=0)
        print(f"accuracy[{pol.name}] container {rep.container_accuracy:.1f} "
              f"object {rep.object_accuracy:.1f} per-layer {rep.per_layer}", flush=True)

    eff = evalharness.efficiency_matrix(
        [pol_oracle, pol_hms, pol_rnd, pol_wv], [pol_oracle, pol_hms, pol_rnd],
        test_graphs, test_cfg, seed=0, t0=0.1, jobs=1)
    for cell in (("oracle", "oracle"), ("model", "model"), ("random", "random"),
                 ("wordvec", "random")):
        print(f"cell {cell}: mean {eff.mean(cell):.1f} median {eff.median(cell):.1f}",
              flush=True)
    print(f"[{time.time()-t0:.0f}s] done", flush=True)


if __name__ == "__main__":
    main()
