#!/usr/bin/env python3
# The convex heart of the system: given per-pixel predicted means and
# variances, find the most likely decomposition under a soft (or hard)
# reconstruction constraint. Everything here is a closed form.

import numpy as np

from softlambert.inference import (
    ImageProblem,
    PixelProblem,
    brute_force_oracle,
    decompose_problem,
    result_as_flat,
    solve_pixel_hard,
    solve_pixel_soft,
)

# ---------------------------------------------------------------------------
# A single pixel. Log-domain image I = 3 in every channel, all predicted
# means 0, all variances 1. The solver must split the explanation between
# albedo (3 channels), shading (1 value), and the slack.
pixel = PixelProblem(mu_A=(0.0, 0.0, 0.0), mu_B=0.0,
                     var_A=1.0, var_B=1.0, var_G=1.0,
                     I_log=(3.0, 3.0, 3.0))
a, b = solve_pixel_soft(pixel)
print("soft solve:  A =", a, " B =", round(b, 4),
      " slack =", round(3.0 - a[0] - b, 4))

a, b = solve_pixel_hard(pixel)
print("hard solve:  A =", a, " B =", round(b, 4),
      " slack =", round(3.0 - a[0] - b, 4))
# Soft keeps some slack (it is a prior-weighted compromise); hard forces
# A + B = I exactly and distributes the explanation by the prior weights.

# ---------------------------------------------------------------------------
# Confidence steers the split. Shrinking one variance pins that output to
# its prediction and pushes the correction into the other outputs.
confident_albedo = PixelProblem(mu_A=(0.0, 0.0, 0.0), mu_B=0.0,
                                var_A=1e-6, var_B=1.0, var_G=1.0,
                                I_log=(3.0, 3.0, 3.0))
a, b = solve_pixel_soft(confident_albedo)
print("\ntiny albedo variance: A =", np.round(a, 6), " B =", round(b, 4))

confident_shading = PixelProblem(mu_A=(0.0, 0.0, 0.0), mu_B=0.0,
                                 var_A=1.0, var_B=1e-6, var_G=1.0,
                                 I_log=(3.0, 3.0, 3.0))
a, b = solve_pixel_soft(confident_shading)
print("tiny shading variance: A =", np.round(a, 4), " B =", round(b, 6))

# A large constraint variance says "this pixel may violate reconstruction"
# (think specular highlight), so the outputs stay at their predictions.
lenient = PixelProblem(mu_A=(0.0, 0.0, 0.0), mu_B=0.0,
                       var_A=1.0, var_B=1.0, var_G=1e6,
                       I_log=(3.0, 3.0, 3.0))
a, b = solve_pixel_soft(lenient)
print("huge constraint variance: A =", np.round(a, 6), " B =", round(b, 6))

# ---------------------------------------------------------------------------
# Whole images add one global variable: the light color C shared by all
# pixels. The alternating solver interleaves an exact C step with the exact
# per-pixel step, and a dense normal-equations oracle certifies it.
rng = np.random.default_rng(3)
problem = ImageProblem(mu_A=rng.normal(size=(4, 4, 3)),
                       mu_B=rng.normal(size=(4, 4, 1)),
                       var_A=rng.uniform(0.2, 5.0, size=(4, 4, 1)),
                       var_B=rng.uniform(0.2, 5.0, size=(4, 4, 1)),
                       var_G=rng.uniform(0.2, 5.0, size=(4, 4, 1)),
                       I_log=rng.normal(size=(4, 4, 3)))

result = decompose_problem(problem, "soft")
oracle = brute_force_oracle(problem, "soft")
print("\n4x4 image, soft mode:")
print("  objective trace:", [round(v, 6) for v in result.objective_trace])
print("  max |solver - oracle| over all variables:",
      f"{np.abs(result_as_flat(result) - oracle).max():.2e}")
print("  estimated light color (log):", np.round(result.C_log, 4))

result = decompose_problem(problem, "hard")
feas = np.abs(result.A_log + result.B_log + result.C_log - problem.I_log)
print("hard mode feasibility, max |A+B+C-I|:", f"{feas.max():.2e}")
