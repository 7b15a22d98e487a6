"""Graph-CNN mesh regression from single images.

Modules: ``autodiff`` (tape engine), ``mesh`` (topology, Laplacians, OBJ),
``coarsening`` (graclus hierarchy, pooling), ``nets`` (Chebyshev layers,
encoder, decoder, pose regressor), ``losses``, ``render`` (differentiable
depth rasterizer), ``synth`` (procedural dataset), ``train``/``metrics``/
``checkpoint``/``cli`` (harness).
"""

__version__ = "0.1.0"
