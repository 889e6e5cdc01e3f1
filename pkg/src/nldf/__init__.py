"""Distilling an analytic dynamic radiance field into a per-ray light-field student.

The teacher is a closed-form density/color field rendered by ray marching;
the student maps a ray's beam feature and a fused per-frame conditioning
vector to M segment colors in a single network evaluation.
"""

__version__ = "0.1.0"
