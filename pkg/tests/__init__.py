"""Test package for ACM OJ CLI."""
