# Initialize fssam package
