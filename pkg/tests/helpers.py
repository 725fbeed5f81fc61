"""In-memory benchmark builders shared by the tests."""

from mirage_eval.depthio import parse_manifest
from mirage_eval.depthmap import DepthMap
from mirage_eval.synth import make_scene


def scene_benchmark(spec, count=3, transform=None):
    """(manifest, loader) over ``count`` synthetic scenes held in memory.

    ``transform(values)`` is applied to every view as it is loaded.
    """
    scenes = {}
    for i in range(count):
        sc = make_scene(spec, i)
        scenes[sc.fragment["id"]] = sc
    manifest = parse_manifest({"version": 1, "samples": [s.fragment for s in scenes.values()]})

    def loader(sample, role, view):
        sc = scenes[sample.id]
        d = sc.full if view == "full" else sc.crops[view]
        if transform is None:
            return d
        return DepthMap(transform(d.as_float64()))

    return manifest, loader
