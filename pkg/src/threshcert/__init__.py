"""Patient-level threshold selection with risk certificates under distribution shift."""
