"""Desk-profile experiment: train lambda=0.02 and lambda=0 runs with the
config defaults and report every acceptance-relevant quantity."""
import json, sys, time
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, "/root/pkg/src")
torch.set_num_threads(2)

from nova.config import load_config
from nova.diagnostics import center_prediction_embeddings, covariance_stats, total_variance, view_prediction_embeddings
from nova.synthdata import generate_dataset, load_manifest, split_manifest
from nova.trainer import build_model, run_training, apply_checkpoint_to_model
from nova.checkpoint import load_checkpoint
from nova.zeroshot import evaluate

out_root = Path(sys.argv[1])
overrides = sys.argv[2:]
out_root.mkdir(parents=True, exist_ok=True)

cfg = load_config(overrides=overrides)
data_dir = out_root / "data"
if not (data_dir / "manifest.csv").exists():
    generate_dataset(cfg.synthetic_spec(), data_dir)
manifest = load_manifest(data_dir / "manifest.csv")
train_data, eval_data = split_manifest(manifest, cfg.get("data", "eval_fraction"), cfg.get("data", "seed"))
print(f"train={len(train_data)} eval={len(eval_data)} spe={len(train_data)//cfg.get('train','batch_size')}")

results = {}
for tag, lam, seed in [("lam002_s0", 0.02, 0), ("lam0_s0", 0.0, 0)]:
    t0 = time.time()
    run_cfg = load_config(overrides=overrides + [f"train.lambda={lam}"], seed=seed)
    tc = run_cfg.train_config()
    log, ckpt = run_training(run_cfg.model_spec(), tc, run_cfg.augment_config(), run_cfg.sigreg_config(),
                             train_data, eval_data, out_root / tag)
    dt = time.time() - t0
    model = build_model(run_cfg.model_spec(), tc.seed)
    apply_checkpoint_to_model(model, load_checkpoint(ckpt))
    aug = run_cfg.augment_config()
    vp = view_prediction_embeddings(model, train_data, aug, epoch=tc.epochs)
    cp = center_prediction_embeddings(model, train_data)
    rep = evaluate(model, eval_data)
    aucs = [e.macro_auc for e in log.evals]
    results[tag] = dict(
        minutes=dt / 60,
        total_view_variance=total_variance(vp),
        center_cov=covariance_stats(cp),
        final_macro_auc=rep.macro_auc,
        per_class={k: round(v, 4) for k, v in rep.per_class.items()},
        auc_trajectory=[round(a, 4) for a in aucs],
        final_losses=dict(mse=log.steps[-1].loss_mse, sig=log.steps[-1].loss_sigreg),
    )
    print(tag, json.dumps(results[tag], indent=1))

ratio = results["lam0_s0"]["total_view_variance"] / results["lam002_s0"]["total_view_variance"]
print("VARIANCE RATIO lam0/lam002:", ratio, "(need <= 0.01)")
(out_root / "summary.json").write_text(json.dumps(results, indent=2))
