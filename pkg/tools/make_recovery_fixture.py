"""Regenerate src/vspin/data/recovery_4h.csv from the default rate model."""

from pathlib import Path

from vspin import io as vio
from vspin.dynamics import RateParams, default_recovery_delays, depletion_recovery_scan

NOISE = 0.02
SEED = 20240601

if __name__ == "__main__":
    curve = depletion_recovery_scan(default_recovery_delays(), p=RateParams()).with_noise(NOISE, SEED)
    out = Path(__file__).resolve().parents[1] / "src" / "vspin" / "data" / "recovery_4h.csv"
    vio.write_csv(out, ["tau_s", "recovered_fraction", "sigma"],
                  zip(curve.tau, curve.recovered_fraction, curve.sigma))
    print(out)
