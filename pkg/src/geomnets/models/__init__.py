"""Message-passing model families grouped by the symmetry type they carry."""
