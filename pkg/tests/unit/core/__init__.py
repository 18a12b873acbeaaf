# Core unit tests package