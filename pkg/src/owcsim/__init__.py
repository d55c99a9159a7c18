"""owcsim: water-to-air optical wireless link simulator.

Submodules
----------
wave_surface     directional wave spectrum and harmonic surface synthesis
channel_optics   minimum-OPL refraction solver and the link gain chain
vision_renderer  backward ray-traced beacon imaging onto the receiver screen
dataset_pipeline labeled vision-sequence dataset generation and storage
trackers         oracle / mean-shift / no-alignment / file-backed trackers
eval_harness     temporal scoring, refraction-point traces, noise sweeps
config           flat key=value run configuration
cli              owcsim command-line entry points (gen / track / sweep / ...)
"""

__version__ = "0.1.0"
