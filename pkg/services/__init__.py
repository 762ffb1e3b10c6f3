# Services package for ActiveFT selection
