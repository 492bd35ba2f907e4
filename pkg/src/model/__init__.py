# Model Layer
