"""
Text layouts for nvdephase reports.
"""

# Header of every plain-text report
REPORT_HEADER = """\
nvdephase report: {command}
fingerprint: {fingerprint}
seed: {seed}
created: {created_at}
"""

# Parameter table, one row per marginal; mirrors the median / HPD table of a fit
PARAMETER_TABLE_HEADER = (
    "{name:<12} {unit:<10} {median:>14} {hpd_lo:>14} {hpd_hi:>14} {rhat:>8} {ess:>10}"
)
PARAMETER_TABLE_ROW = (
    "{name:<12} {unit:<10} {median:>14.6g} {hpd_lo:>14.6g} {hpd_hi:>14.6g} {rhat:>8} {ess:>10}"
)

# Sampler diagnostics block
DIAGNOSTICS_BLOCK = """\
sampler: {sampler}  chains: {chains}  draws/chain: {draws_per_chain}  warmup: {warmup}
acceptance: {acceptance}
divergences: {divergences}
max rhat: {max_rhat}  min ess: {min_ess}  converged: {converged}{forced}
"""

# Non-Markovianity measures
NM_TABLE_HEADER = "{kind:<10} {phi:>10} {value:>14} {intervals:>10}"
NM_TABLE_ROW = "{kind:<10} {phi:>10} {value:>14.6g} {intervals:>10d}"

# Predictive curve summary, one row per curve
PREDICTIVE_ROW = "{curve:<12} argmin={argmin:.4g} rad  min={minimum:.6g}  max={maximum:.6g}  draws={n_draws}"

OUTPUTS_HEADER = "outputs:"
OUTPUT_ROW = "  {name}: {path}"
