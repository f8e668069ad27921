# Run settings and logging setup
