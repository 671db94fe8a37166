"""
Checking the hand-written backward passes
=========================================

Every layer's gradient is compared with central finite differences in
float64. Errors near 1e-9 are what rounding alone produces.
"""

from videnn import gradcheck

for op, err in gradcheck.run_gradcheck(seed=0).items():
    print(f"{op:28s} {err:.2e}")

# The same suite backs `videnn gradcheck`, which exits with status 3
# when any op exceeds the tolerance.
print("tolerance:", gradcheck.TOLERANCE)
