"""Simulation workbench for a soft pneumatic continuum arm.

Modules:
  kinematics    piecewise-constant-curvature forward/inverse maps
  plant         synthetic pneumatic plant with viscoelastic memory
  pose_opt      task-space target to configuration-space pose
  confignet     learned configuration-to-pressure nets
  two_level     model-based controller with feedback wrappers
  jacobian_ctrl estimated-Jacobian closed-loop controller
  qlearn        model-free tabular Q-learning controller
  design        closed-form design analysis and parameter sweep
  harness       experiment protocols and reporting
  cli           command-line entry point
"""

__version__ = "0.1.0"
