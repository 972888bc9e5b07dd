"""Sample embedding diagnostics along a long training trajectory by
repeatedly resuming from checkpoints."""
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

out_root = Path(sys.argv[1]); lam = float(sys.argv[2]); overrides = sys.argv[3:]
out_root.mkdir(parents=True, exist_ok=True)
cfg = load_config(overrides=overrides + [f"train.lambda={lam}"])
data_dir = out_root.parent / "probe_data"
if not (data_dir / "manifest.csv").exists():
    generate_dataset(cfg.synthetic_spec(), data_dir)
manifest = load_manifest(data_dir / "manifest.csv")
train_data, eval_data = split_manifest(manifest, cfg.get("data","eval_fraction"), cfg.get("data","seed"))
tc = cfg.train_config()
spe = len(train_data) // tc.batch_size
total = tc.epochs * spe
seg = max(spe * 4, total // 8)
print(f"lam={lam} train={len(train_data)} spe={spe} total={total} seg={seg}", flush=True)

prev = None
step = 0
while step < total:
    step = min(total, step + seg)
    t0 = time.time()
    log, ckpt = run_training(cfg.model_spec(), tc, cfg.augment_config(), cfg.sigreg_config(),
                             train_data, None, out_root / f"seg{step}",
                             resume_from=prev, stop_after_step=step)
    prev = ckpt
    model = build_model(cfg.model_spec(), tc.seed)
    apply_checkpoint_to_model(model, load_checkpoint(ckpt))
    vp = view_prediction_embeddings(model, train_data, cfg.augment_config(), epoch=step // spe)
    cp = center_prediction_embeddings(model, train_data)
    cs = covariance_stats(cp)
    rep = evaluate(model, eval_data)
    mse = log.steps[-1].loss_mse if log.steps else None
    sig = log.steps[-1].loss_sigreg if log.steps else None
    per_dim = total_variance(vp) / vp.shape[1]
    c = mse / per_dim if mse else None
    print(json.dumps(dict(step=step, per_dim_var=round(per_dim,5), mse=mse, sig=sig,
                          c=round(c,4) if c else None, cond=round(cs['condition_number'],1),
                          vmin=round(cs['var_min'],4), vmax=round(cs['var_max'],4),
                          auc=round(rep.macro_auc,4), mins=round((time.time()-t0)/60,2))), flush=True)
