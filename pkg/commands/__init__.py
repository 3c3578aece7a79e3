# Initialize the commands package
