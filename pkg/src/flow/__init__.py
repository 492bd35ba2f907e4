# Flow Layer
