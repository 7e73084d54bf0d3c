"""Range-aided lidar-inertial odometry.

Sliding-window sensor fusion of IMU preintegration, lidar plane/edge
features, and body-offset UWB ranges, with a synthetic-world simulator
and trajectory evaluation tools.
"""

__version__ = "0.1.0"
