"""One-shot converter: NASA PCoE battery containers -> telemetry interchange files."""

from .convert import ConversionResult, convert_container, convert_path

__version__ = "0.1.0"

__all__ = ["ConversionResult", "convert_container", "convert_path"]
