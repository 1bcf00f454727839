from pydantic import BaseModel, ConfigDict, Field, model_validator

GRID_TOLERANCE = 1e-9


class PillarGrid(BaseModel):
    """
    Bird's-eye-view pillar grid over [x_min, x_max) x [y_min, y_max).
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    x_min: float = -75.0
    x_max: float = 75.0
    y_min: float = -75.0
    y_max: float = 75.0
    pillar_dx: float = Field(default=150.0 / 512, gt=0)
    pillar_dy: float = Field(default=150.0 / 512, gt=0)

    @model_validator(mode="after")
    def _exact_division(self) -> "PillarGrid":
        for lo, hi, size, axis in ((self.x_min, self.x_max, self.pillar_dx, "x"),
                                   (self.y_min, self.y_max, self.pillar_dy, "y")):
            extent = hi - lo
            if extent <= 0:
                raise ValueError(f"{axis} range is empty: [{lo}, {hi})")
            cells = round(extent / size)
            if cells < 1 or abs(cells * size - extent) > GRID_TOLERANCE * max(1.0, extent):
                raise ValueError(f"{axis} extent {extent} is not a whole number of {size} m pillars")
        return self

    @property
    def nx(self) -> int:
        return round((self.x_max - self.x_min) / self.pillar_dx)

    @property
    def ny(self) -> int:
        return round((self.y_max - self.y_min) / self.pillar_dy)

    @property
    def num_pillars(self) -> int:
        return self.nx * self.ny

    @classmethod
    def square(cls, half_extent: float, cells: int) -> "PillarGrid":
        size = 2 * half_extent / cells
        return cls(x_min=-half_extent, x_max=half_extent, y_min=-half_extent, y_max=half_extent,
                   pillar_dx=size, pillar_dy=size)
