"""Test package for safees."""
