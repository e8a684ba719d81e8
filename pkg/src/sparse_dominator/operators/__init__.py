"""omega-Calderón–Zygmund kernels and the maximal operators built on them."""

from .kernels import (KernelSpec, Modulus, audit_modulus, audit_size, audit_smoothness, calibrate_modulus,
                      dini_norm, get_kernel, hilbert_kernel, holder, kernel_names, lipschitz, log_power,
                      register_kernel, zero_kernel)
from .maximal import (OperatorConstants, apply_truncated, estimate_l2_norm, grand_maximal, hardy_littlewood,
                      MaximalComparison, compare_maximal, kernel_block, local_grand_maximal, operator_constants,
                      truncated_maximal)
