# Sample Storage
