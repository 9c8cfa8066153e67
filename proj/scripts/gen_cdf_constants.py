#!/usr/bin/env python3
"""Regenerates src/entropy/coding_constants.inc.

The coder's table construction uses only these integer constants, so every
build derives identical frequency tables from the same quantized (mean, scale).
"""
import mpmath

mpmath.mp.dps = 50
STEP_LOG2 = 6          # CDF samples every 1/64 standard deviations
SPAN = 8               # covers [0, 8]
SCALE_LEVELS = 64
SCALE_MIN = mpmath.mpf("0.11")
SCALE_MAX = mpmath.mpf("64")

def phi_q32(t):
    return int(mpmath.nint(mpmath.ncdf(t) * 2**32))

n = SPAN * (1 << STEP_LOG2) + 1
cdf = [phi_q32(mpmath.mpf(i) / (1 << STEP_LOG2)) for i in range(n)]
ratio = (SCALE_MAX / SCALE_MIN) ** (mpmath.mpf(1) / (SCALE_LEVELS - 1))
levels = [SCALE_MIN * ratio**k for k in range(SCALE_LEVELS)]
inv_q16 = [int(mpmath.nint(mpmath.mpf(65536) / s)) for s in levels]
# Geometric midpoints: scale s maps to the first level whose upper bound is >= s.
bounds = [mpmath.sqrt(levels[k] * levels[k + 1]) for k in range(SCALE_LEVELS - 1)]

def rows(vals, fmt, per):
    out = []
    for i in range(0, len(vals), per):
        out.append("    " + ", ".join(fmt(v) for v in vals[i:i + per]) + ",")
    return "\n".join(out)

with open("src/entropy/coding_constants.inc", "w") as f:
    f.write("// Generated by scripts/gen_cdf_constants.py. Do not edit.\n\n")
    f.write(f"constexpr int kCdfStepLog2 = {STEP_LOG2};\n")
    f.write(f"constexpr std::size_t kCdfSamples = {n};\n")
    f.write("// round(Phi(i / 64) * 2^32), i = 0..512\n")
    f.write("constexpr std::uint64_t kNormalCdfQ32[kCdfSamples] = {\n")
    f.write(rows(cdf, lambda v: f"{v}ull", 6) + "\n};\n\n")
    f.write(f"constexpr std::size_t kScaleLevels = {SCALE_LEVELS};\n")
    f.write("// Scale grid: 0.11 * (64 / 0.11)^(k / 63)\n")
    f.write("constexpr double kScaleLevel[kScaleLevels] = {\n")
    f.write(rows(levels, lambda v: mpmath.nstr(v, 17, min_fixed=-30, max_fixed=30), 4) + "\n};\n\n")
    f.write("// round(2^16 / kScaleLevel[k])\n")
    f.write("constexpr std::uint32_t kInvScaleQ16[kScaleLevels] = {\n")
    f.write(rows(inv_q16, lambda v: f"{v}u", 8) + "\n};\n\n")
    f.write("// sqrt(kScaleLevel[k] * kScaleLevel[k + 1])\n")
    f.write("constexpr double kScaleUpper[kScaleLevels - 1] = {\n")
    f.write(rows(bounds, lambda v: mpmath.nstr(v, 17, min_fixed=-30, max_fixed=30), 4) + "\n};\n")
