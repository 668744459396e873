import pytest

pytest.importorskip("nasa_adapter", reason="adapter package not installed")
pytest.importorskip("soekit", reason="soekit needed for round-trip checks")
