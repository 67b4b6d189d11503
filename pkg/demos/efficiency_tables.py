# Size and cost of every preset: parameter totals, MACs at the standard
# input, and where the budget actually goes layer by layer.

from lapx.analysis import count_params, efficiency_report, report_to_text
from lapx.model import ModelConfig, PRESETS, build_model, preset_config

print(f"{'preset':12s} {'stages':>6s} {'chan':>5s} {'params':>10s}")
for name in PRESETS:
    cfg = preset_config(name)
    n = count_params(build_model(cfg, 0)).total_params
    print(f"{name:12s} {cfg.num_stages:>6d} {cfg.channels:>5d} {n:>10,d}")

# cost scales with input area, so fix the input before quoting MACs
cfg = preset_config("lapx")
doc = cfg.to_dict()
doc["input_hw"] = (256, 192)
cfg = ModelConfig(**doc)
model = build_model(cfg, 0)
report = efficiency_report(model, (1, 3, 256, 192))
print(f"\nflagship at 256x192: {report.total_macs:,} MACs "
      f"({report.total_flops_2x / 1e9:.2f} GFLOPs), "
      f"peak activations {report.peak_activation_bytes / 1e6:.1f} MB")

# the ten most expensive layers
rows = sorted(report.rows, key=lambda r: -r.macs)[:10]
print("\nheaviest layers:")
for r in rows:
    print(f"  {r.name:32s} {r.macs:>14,d} MACs  {r.param_count:>8,d} params")

# full per-layer report for a small config stays readable
tiny = ModelConfig(num_stages=1, channels=8, num_keypoints=4,
                   input_hw=(32, 32), num_pool_levels=2, blocks_per_level=1,
                   nonlocal_stages=set())
print("\n" + report_to_text(efficiency_report(build_model(tiny, 0),
                                              (1, 3, 32, 32))))
