"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when
``LCROWD_PURE_PYTHON`` is set to a non-empty value, the pure-Python
reference in :mod:`lcrowd._kernels_py` takes over. Both expose the same
functions and agree bit for bit.
"""
import os

if os.environ.get("LCROWD_PURE_PYTHON"):
    from lcrowd._kernels_py import (  # noqa: F401
        OBSTACLE_HORIZON,
        agent_velocity,
        compute_velocities,
        fit_residual,
        pref_toward,
    )

    BACKEND = "python"
else:
    try:
        from lcrowd._kernels import (  # noqa: F401
            OBSTACLE_HORIZON,
            agent_velocity,
            compute_velocities,
            fit_residual,
            pref_toward,
        )

        BACKEND = "cython"
    except ImportError:  # extension not built
        from lcrowd._kernels_py import (  # noqa: F401
            OBSTACLE_HORIZON,
            agent_velocity,
            compute_velocities,
            fit_residual,
            pref_toward,
        )

        BACKEND = "python"
