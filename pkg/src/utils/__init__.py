# Configuration and Errors
