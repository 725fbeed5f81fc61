"""Exception hierarchy.

Every error carries a ``category`` (the class name) that the command line
prints as a machine-parsable prefix.
"""


class MirageError(Exception):
    """Base class for all toolkit errors."""

    unit = None

    @property
    def category(self):
        return type(self).__name__

    def tag(self, unit):
        """Attach the (sample id, roi index, crop id) being evaluated."""
        if self.unit is None:
            self.unit = unit
            msg = self.args[0] if self.args else ""
            self.args = (f"[{'/'.join(str(u) for u in unit)}] {msg}",) + self.args[1:]
        return self


# geometry
class InvalidShape(MirageError):
    pass


class DegeneratePolygon(InvalidShape):
    pass


class EmptyMask(MirageError):
    pass


class InfeasibleCrop(MirageError):
    pass


# io
class UnsupportedFormat(MirageError):
    pass


class CorruptFile(MirageError):
    pass


class AllInvalid(MirageError):
    pass


class SchemaError(MirageError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class DuplicateSampleId(SchemaError):
    def __init__(self, sample_id):
        super().__init__("samples", f"duplicate sample id {sample_id!r}")
        self.sample_id = sample_id


class DanglingCropRef(SchemaError):
    def __init__(self, sample_id, crop_id):
        super().__init__(sample_id, f"depth binding references unknown crop {crop_id!r}")
        self.sample_id = sample_id
        self.crop_id = crop_id


class IoError(MirageError):
    pass


# metrics
class TooSmall(MirageError):
    pass


class EmptyEffectiveRoi(MirageError):
    pass


class DegenerateFit(MirageError):
    pass


class NoValidPairs(MirageError):
    pass


# losses
class RingEmpty(MirageError):
    pass


class DegenerateBackground(MirageError):
    pass


class AllSectorsDegenerate(MirageError):
    pass


# fixtures / report
class SpecError(MirageError):
    pass


class MissingMetric(MirageError):
    pass


class ZeroBaseline(MirageError):
    pass
